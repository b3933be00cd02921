#pragma once

// Metric and artifact serialization for experiment runs.

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedbal/config.hpp"
#include "fedbal/model.hpp"
#include "fedbal/sim.hpp"

namespace fedbal {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline constexpr const char* kRoundsCsvHeader =
    "round,wallclock_s,deadline_s,loss_threshold,ltr,ddlr,n_completed,n_timed_out,U_R,"
    "test_accuracy";

inline std::string rounds_csv(const std::vector<RoundRecord>& records) {
  std::string out = kRoundsCsvHeader;
  out += "\n";
  for (const auto& r : records) {
    out += std::to_string(r.round_index);
    out += ",";
    out += format_double(r.wallclock);
    out += ",";
    out += format_double(r.deadline);
    out += ",";
    out += format_double(r.loss_threshold);
    out += ",";
    out += format_double(r.ltr);
    out += ",";
    out += format_double(r.ddlr);
    out += ",";
    out += std::to_string(r.completed.size());
    out += ",";
    out += std::to_string(r.timed_out.size());
    out += ",";
    out += format_double(r.utility);
    out += ",";
    out += format_double(r.test_accuracy);
    out += "\n";
  }
  return out;
}

// First cumulative wall clock at which the accuracy target is reached.
inline std::optional<double> time_to_accuracy(const std::vector<RoundRecord>& records,
                                              double target) {
  for (const auto& r : records)
    if (r.test_accuracy >= target) return r.wallclock;
  return std::nullopt;
}

inline nlohmann::json run_summary(const ExperimentConfig& cfg,
                                  const std::vector<RoundRecord>& records) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["method"] = detail::method_name(cfg.method);
  j["deadline_policy"] = detail::policy_name(cfg.deadline_policy);
  j["rounds_executed"] = records.size();
  j["final_accuracy"] = records.empty() ? 0.0 : records.back().test_accuracy;
  j["total_wallclock_s"] = records.empty() ? 0.0 : records.back().wallclock;
  nlohmann::json targets = nlohmann::json::array();
  for (const double t : cfg.accuracy_targets) {
    nlohmann::json entry;
    entry["target"] = t;
    const auto hit = time_to_accuracy(records, t);
    entry["wallclock_s"] = hit ? nlohmann::json(*hit) : nlohmann::json(nullptr);
    targets.push_back(entry);
  }
  j["time_to_accuracy"] = targets;
  return j;
}

inline nlohmann::json weights_json(const WeightVector& w) {
  nlohmann::json j;
  j["layout"] = {{"input_dim", w.layout.input_dim},
                 {"hidden_dim", w.layout.hidden_dim},
                 {"num_classes", w.layout.num_classes}};
  j["values"] = w.values;
  return j;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace fedbal
