// Experiment runner CLI: `run` executes one simulation and writes its
// artifacts, `compare` builds a speedup table across finished runs, and
// `ddl-profile` dumps the deadline-efficiency curve for a latency trace.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fedbal/config.hpp"
#include "fedbal/data.hpp"
#include "fedbal/io.hpp"
#include "fedbal/server.hpp"
#include "fedbal/sim.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_override) {
  fedbal::ExperimentConfig cfg = fedbal::load_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  fs::create_directories(out_dir);

  fedbal::Experiment exp(cfg);
  const auto records = exp.run_experiment();

  fedbal::write_file((fs::path(out_dir) / "rounds.csv").string(), fedbal::rounds_csv(records));
  fedbal::write_file((fs::path(out_dir) / "summary.json").string(),
                     fedbal::run_summary(cfg, records).dump(2) + "\n");
  fedbal::write_file((fs::path(out_dir) / "final_weights.json").string(),
                     fedbal::weights_json(exp.weights()).dump() + "\n");
  std::cout << "wrote " << records.size() << " rounds to " << out_dir << "\n";
  return 0;
}

struct RunData {
  std::string method;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double total_wallclock = 0.0;
  std::vector<std::pair<double, double>> curve;  // (wallclock, accuracy)
};

RunData load_run(const fs::path& dir) {
  RunData run;
  std::ifstream sin(dir / "summary.json");
  if (!sin) throw fedbal::IoError("missing summary.json in " + dir.string());
  nlohmann::json j = nlohmann::json::parse(sin);
  run.method = j.at("method").get<std::string>();
  run.seed = j.at("seed").get<std::uint64_t>();
  run.final_accuracy = j.at("final_accuracy").get<double>();
  run.total_wallclock = j.at("total_wallclock_s").get<double>();

  std::ifstream cin(dir / "rounds.csv");
  if (!cin) throw fedbal::IoError("missing rounds.csv in " + dir.string());
  std::string line;
  std::getline(cin, line);  // header
  while (std::getline(cin, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 10) continue;
    run.curve.emplace_back(std::stod(cells[1]), std::stod(cells[9]));
  }
  return run;
}

std::optional<double> time_to_target(const RunData& run, double target) {
  for (const auto& [t, acc] : run.curve)
    if (acc >= target) return t;
  return std::nullopt;
}

bool is_baseline_method(const std::string& m) {
  return m != "fedbalancer" && m != "oortbalancer";
}

int cmd_compare(const std::string& runs_dir, std::optional<double> target_override) {
  std::vector<RunData> runs;
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    if (!entry.is_directory()) continue;
    if (!fs::exists(entry.path() / "summary.json")) continue;
    runs.push_back(load_run(entry.path()));
  }
  if (runs.size() < 2) {
    std::cerr << "compare: need at least 2 completed runs in " << runs_dir << "\n";
    return 2;
  }

  std::map<std::string, std::vector<const RunData*>> by_method;
  for (const auto& r : runs) by_method[r.method].push_back(&r);

  auto mean_final = [](const std::vector<const RunData*>& rs) {
    double s = 0.0;
    for (const auto* r : rs) s += r->final_accuracy;
    return s / static_cast<double>(rs.size());
  };

  // Default target: the best baseline's mean final accuracy; the baseline's
  // own time-to-target is the speedup numerator for every method.
  std::string baseline_method;
  double best = -1.0;
  for (const auto& [m, rs] : by_method) {
    if (!is_baseline_method(m)) continue;
    if (const double f = mean_final(rs); f > best) {
      best = f;
      baseline_method = m;
    }
  }
  if (baseline_method.empty()) {
    for (const auto& [m, rs] : by_method)
      if (const double f = mean_final(rs); f > best) {
        best = f;
        baseline_method = m;
      }
  }
  const double target = target_override ? *target_override : best;

  // Baseline time-to-target per seed, plus the mean as a fallback.
  std::map<std::uint64_t, double> base_time_by_seed;
  double base_time_sum = 0.0;
  int base_time_n = 0;
  for (const auto* r : by_method.at(baseline_method)) {
    const auto t = time_to_target(*r, target);
    const double v = t ? *t : r->total_wallclock;
    base_time_by_seed[r->seed] = v;
    base_time_sum += v;
    ++base_time_n;
  }
  const double base_time_mean = base_time_sum / static_cast<double>(base_time_n);

  struct Row {
    std::string method;
    double speedup_mean, speedup_std, acc_mean, acc_std;
    int seeds;
  };
  std::vector<Row> rows;
  for (const auto& [m, rs] : by_method) {
    std::vector<double> speedups, accs;
    for (const auto* r : rs) {
      const auto it = base_time_by_seed.find(r->seed);
      const double t_base = it != base_time_by_seed.end() ? it->second : base_time_mean;
      const auto t = time_to_target(*r, target);
      // A method that never reaches the target is credited with the fraction
      // of the baseline's target time that its full run covered.
      const double speedup = t ? t_base / *t : t_base / r->total_wallclock;
      speedups.push_back(speedup);
      accs.push_back(r->final_accuracy);
    }
    auto stats = [](const std::vector<double>& v) {
      double m0 = 0.0;
      for (const double x : v) m0 += x;
      m0 /= static_cast<double>(v.size());
      double var = 0.0;
      for (const double x : v) var += (x - m0) * (x - m0);
      var /= static_cast<double>(v.size());
      return std::pair(m0, std::sqrt(var));
    };
    const auto [sm, ss] = stats(speedups);
    const auto [am, as] = stats(accs);
    rows.push_back({m, sm, ss, am, as, static_cast<int>(rs.size())});
  }

  std::cout << "target_accuracy=" << fedbal::format_double(target)
            << " baseline=" << baseline_method << "\n";
  std::cout << "method,seeds,speedup_mean,speedup_std,final_acc_mean,final_acc_std\n";
  for (const auto& r : rows)
    std::cout << r.method << "," << r.seeds << "," << fedbal::format_double(r.speedup_mean) << ","
              << fedbal::format_double(r.speedup_std) << "," << fedbal::format_double(r.acc_mean)
              << "," << fedbal::format_double(r.acc_std) << "\n";
  std::cout << "\n";
  std::printf("%-28s %5s %16s %16s\n", "method", "seeds", "speedup", "final_acc");
  for (const auto& r : rows)
    std::printf("%-28s %5d %8.2f+-%-6.2f %8.3f+-%-6.3f\n", r.method.c_str(), r.seeds,
                r.speedup_mean, r.speedup_std, r.acc_mean, r.acc_std);
  return 0;
}

int cmd_ddl_profile(const std::string& trace_path, int epochs, int batch,
                    std::optional<double> ot_len) {
  const fedbal::TraceFile tf = fedbal::load_traces(trace_path);
  std::vector<double> times;
  for (const auto& c : tf.clients) {
    const double len = ot_len ? *ot_len : static_cast<double>(batch);
    times.push_back(fedbal::mean_of(c.download_s) + fedbal::mean_of(c.upload_s) +
                    fedbal::train_time_estimate(fedbal::mean_of(c.batch_latency_s), len, batch,
                                                epochs));
  }
  const double n = static_cast<double>(times.size());
  const double max_t = std::ceil(*std::max_element(times.begin(), times.end()));
  double peak_t = 1.0, peak_v = -1.0;
  std::cout << "t,ddl_e\n";
  for (double t = 1.0; t <= std::max(1.0, max_t); t += 1.0) {
    double completed = 0.0;
    for (const double c : times)
      if (c <= t) completed += 1.0;
    const double v = completed / t;
    std::cout << fedbal::format_double(t) << "," << fedbal::format_double(v) << "\n";
    if (v > peak_v) {
      peak_v = v;
      peak_t = t;
    }
    if (completed == n && v <= peak_v && t >= max_t) break;
  }
  std::cout << "peak," << fedbal::format_double(peak_t) << "," << fedbal::format_double(peak_v)
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedBalancer-style federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, runs_dir, trace_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<double> target_override, ot_len;
  int epochs = 1, batch = 10;

  auto* run = app.add_subcommand("run", "run one experiment from a JSON config");
  run->add_option("--config", config_path, "config JSON path")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--seed", seed_override, "seed override");

  auto* compare = app.add_subcommand("compare", "speedup table across completed runs");
  compare->add_option("--runs", runs_dir, "directory holding run output directories")->required();
  compare->add_option("--target", target_override, "accuracy target override");

  auto* profile = app.add_subcommand("ddl-profile", "deadline-efficiency curve for a trace");
  profile->add_option("--trace", trace_path, "JSON-lines trace path")->required();
  profile->add_option("--epochs", epochs, "local epochs")->required();
  profile->add_option("--batch", batch, "batch size")->required();
  profile->add_option("--ot-len", ot_len, "selected sample count per client (default: one batch)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, seed_override);
    if (compare->parsed()) return cmd_compare(runs_dir, target_override);
    if (profile->parsed()) return cmd_ddl_profile(trace_path, epochs, batch, ot_len);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
