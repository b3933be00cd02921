#pragma once

// Experiment configuration: JSON schema documented in docs/config.md.

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace fedbal {

enum class Method { kFedAvg, kProx, kFedBalancer, kOortBalancer, kSampleSelectionBaseline };
enum class DeadlinePolicy { kFixed1T, kFixed2T, kSmartPc, kWaitForAll, kAdaptiveDdlE };
enum class ClientSelection { kRandom, kStatUtil };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FbParams {
  int w = 20;             // control window, in rounds
  double lss = 0.05;      // loss-threshold step size
  double dss = 0.05;      // deadline step size
  double p = 1.0;         // OT sampling ratio
  double ltr_init = 0.0;
  double ddlr_init = 1.0;
  // Percentiles used for the LLow/LHigh metadata.
  double llow_percentile = 0.0;
  double lhigh_percentile = 80.0;
  // When true, the server-side train-time estimate uses the literal
  // (len-1)/batch reading instead of the ceiling batch count.
  bool literal_train_time = false;
};

// Synthetic task shape; ignored for the dataset if features are supplied
// some other way, but the simulator always consumes it.
struct DataParams {
  int input_dim = 20;
  int num_classes = 5;
  double dirichlet_alpha = 0.5;
  double samples_log_mean = 4.6;   // lognormal parameters for per-client counts
  double samples_log_sigma = 0.45;
  int min_samples = 10;
  double label_noise_frac = 0.05;
  double class_mean_scale = 0.35;  // scale of the per-class Gaussian means
  double test_fraction = 0.1;
  int hidden_dim = 0;              // 0 = softmax regression
};

struct TraceParams {
  std::string trace_path;            // when set, latencies are loaded, not generated
  double heterogeneity_spread = 12.0;
  double batch_latency_median_s = 0.05;
  double net_latency_median_s = 1.0;
  double jitter_sigma = 0.05;
  int pre_fl_samples = 10;           // k latency samples per client before round 1
};

struct ExperimentConfig {
  int num_clients = 10;
  int cohort_size = 5;
  int local_epochs = 1;
  int batch_size = 10;
  double learning_rate = 0.05;
  double prox_mu = 0.0;
  int rounds = 10;
  std::uint64_t seed = 1;
  Method method = Method::kFedAvg;
  DeadlinePolicy deadline_policy = DeadlinePolicy::kFixed1T;
  FbParams fb_params;
  double noise_factor = 0.0;
  ClientSelection client_selection = ClientSelection::kRandom;
  double loss_clamp = 50.0;
  std::optional<double> wallclock_budget_s;  // when set, overrides `rounds` as the stop rule
  std::vector<double> accuracy_targets;
  DataParams data;
  TraceParams trace;
};

namespace detail {

inline Method parse_method(const std::string& s) {
  if (s == "fedavg") return Method::kFedAvg;
  if (s == "prox") return Method::kProx;
  if (s == "fedbalancer") return Method::kFedBalancer;
  if (s == "oortbalancer") return Method::kOortBalancer;
  if (s == "sample_selection_baseline") return Method::kSampleSelectionBaseline;
  throw ConfigError("unknown method: " + s);
}

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kFedAvg: return "fedavg";
    case Method::kProx: return "prox";
    case Method::kFedBalancer: return "fedbalancer";
    case Method::kOortBalancer: return "oortbalancer";
    case Method::kSampleSelectionBaseline: return "sample_selection_baseline";
  }
  return "?";
}

inline DeadlinePolicy parse_policy(const std::string& s) {
  if (s == "fixed_1t") return DeadlinePolicy::kFixed1T;
  if (s == "fixed_2t") return DeadlinePolicy::kFixed2T;
  if (s == "smartpc") return DeadlinePolicy::kSmartPc;
  if (s == "wait_for_all") return DeadlinePolicy::kWaitForAll;
  if (s == "adaptive_ddl_e") return DeadlinePolicy::kAdaptiveDdlE;
  throw ConfigError("unknown deadline_policy: " + s);
}

inline std::string policy_name(DeadlinePolicy p) {
  switch (p) {
    case DeadlinePolicy::kFixed1T: return "fixed_1t";
    case DeadlinePolicy::kFixed2T: return "fixed_2t";
    case DeadlinePolicy::kSmartPc: return "smartpc";
    case DeadlinePolicy::kWaitForAll: return "wait_for_all";
    case DeadlinePolicy::kAdaptiveDdlE: return "adaptive_ddl_e";
  }
  return "?";
}

inline ClientSelection parse_selection(const std::string& s) {
  if (s == "random") return ClientSelection::kRandom;
  if (s == "stat_util") return ClientSelection::kStatUtil;
  throw ConfigError("unknown client_selection: " + s);
}

inline std::string selection_name(ClientSelection s) {
  return s == ClientSelection::kRandom ? "random" : "stat_util";
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid value for field '") + key + "': " + e.what());
    }
  }
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& c) {
  if (c.num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (c.cohort_size < 1) throw ConfigError("cohort_size must be >= 1");
  if (c.cohort_size > c.num_clients) throw ConfigError("cohort_size exceeds num_clients");
  if (c.local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.prox_mu < 0.0) throw ConfigError("prox_mu must be >= 0");
  if (c.rounds < 0) throw ConfigError("rounds must be >= 0");
  if (c.noise_factor < 0.0) throw ConfigError("noise_factor must be >= 0");
  if (c.fb_params.w < 1) throw ConfigError("fb_params.w must be >= 1");
  if (c.fb_params.lss < 0.0 || c.fb_params.lss > 1.0) throw ConfigError("lss outside [0,1]");
  if (c.fb_params.dss < 0.0 || c.fb_params.dss > 1.0) throw ConfigError("dss outside [0,1]");
  if (c.fb_params.p < 0.5 || c.fb_params.p > 1.0) throw ConfigError("p outside [0.5,1.0]");
  if (c.method == Method::kFedBalancer && c.deadline_policy != DeadlinePolicy::kAdaptiveDdlE)
    throw ConfigError("method=fedbalancer requires deadline_policy=adaptive_ddl_e");
  if (c.data.dirichlet_alpha <= 0.0) throw ConfigError("dirichlet_alpha must be > 0");
  if (c.data.label_noise_frac < 0.0 || c.data.label_noise_frac >= 1.0)
    throw ConfigError("label_noise_frac outside [0,1)");
  if (c.data.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (c.data.input_dim < 1) throw ConfigError("input_dim must be >= 1");
  if (c.trace.heterogeneity_spread < 1.0) throw ConfigError("heterogeneity_spread must be >= 1");
  if (c.trace.pre_fl_samples < 10) throw ConfigError("pre_fl_samples must be >= 10");
  if (c.loss_clamp <= 0.0) throw ConfigError("loss_clamp must be > 0");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read_field;
  ExperimentConfig c;
  read_field(j, "num_clients", c.num_clients);
  read_field(j, "cohort_size", c.cohort_size);
  read_field(j, "local_epochs", c.local_epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "prox_mu", c.prox_mu);
  read_field(j, "rounds", c.rounds);
  read_field(j, "seed", c.seed);
  read_field(j, "noise_factor", c.noise_factor);
  read_field(j, "loss_clamp", c.loss_clamp);
  read_field(j, "accuracy_targets", c.accuracy_targets);
  if (j.contains("wallclock_budget_s")) c.wallclock_budget_s = j.at("wallclock_budget_s").get<double>();
  if (j.contains("method")) c.method = detail::parse_method(j.at("method").get<std::string>());
  if (j.contains("deadline_policy"))
    c.deadline_policy = detail::parse_policy(j.at("deadline_policy").get<std::string>());
  if (j.contains("client_selection"))
    c.client_selection = detail::parse_selection(j.at("client_selection").get<std::string>());
  if (auto it = j.find("fb_params"); it != j.end()) {
    read_field(*it, "w", c.fb_params.w);
    read_field(*it, "lss", c.fb_params.lss);
    read_field(*it, "dss", c.fb_params.dss);
    read_field(*it, "p", c.fb_params.p);
    read_field(*it, "ltr_init", c.fb_params.ltr_init);
    read_field(*it, "ddlr_init", c.fb_params.ddlr_init);
    read_field(*it, "literal_train_time", c.fb_params.literal_train_time);
  }
  if (auto it = j.find("data"); it != j.end()) {
    read_field(*it, "input_dim", c.data.input_dim);
    read_field(*it, "num_classes", c.data.num_classes);
    read_field(*it, "dirichlet_alpha", c.data.dirichlet_alpha);
    read_field(*it, "samples_log_mean", c.data.samples_log_mean);
    read_field(*it, "samples_log_sigma", c.data.samples_log_sigma);
    read_field(*it, "min_samples", c.data.min_samples);
    read_field(*it, "label_noise_frac", c.data.label_noise_frac);
    read_field(*it, "class_mean_scale", c.data.class_mean_scale);
    read_field(*it, "test_fraction", c.data.test_fraction);
    read_field(*it, "hidden_dim", c.data.hidden_dim);
  }
  if (auto it = j.find("trace"); it != j.end()) {
    read_field(*it, "trace_path", c.trace.trace_path);
    read_field(*it, "heterogeneity_spread", c.trace.heterogeneity_spread);
    read_field(*it, "batch_latency_median_s", c.trace.batch_latency_median_s);
    read_field(*it, "net_latency_median_s", c.trace.net_latency_median_s);
    read_field(*it, "jitter_sigma", c.trace.jitter_sigma);
    read_field(*it, "pre_fl_samples", c.trace.pre_fl_samples);
  }
  validate_config(c);
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["num_clients"] = c.num_clients;
  j["cohort_size"] = c.cohort_size;
  j["local_epochs"] = c.local_epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["prox_mu"] = c.prox_mu;
  j["rounds"] = c.rounds;
  j["seed"] = c.seed;
  j["method"] = detail::method_name(c.method);
  j["deadline_policy"] = detail::policy_name(c.deadline_policy);
  j["client_selection"] = detail::selection_name(c.client_selection);
  j["noise_factor"] = c.noise_factor;
  j["loss_clamp"] = c.loss_clamp;
  j["accuracy_targets"] = c.accuracy_targets;
  if (c.wallclock_budget_s) j["wallclock_budget_s"] = *c.wallclock_budget_s;
  j["fb_params"] = {{"w", c.fb_params.w},
                    {"lss", c.fb_params.lss},
                    {"dss", c.fb_params.dss},
                    {"p", c.fb_params.p},
                    {"ltr_init", c.fb_params.ltr_init},
                    {"ddlr_init", c.fb_params.ddlr_init},
                    {"literal_train_time", c.fb_params.literal_train_time}};
  j["data"] = {{"input_dim", c.data.input_dim},
               {"num_classes", c.data.num_classes},
               {"dirichlet_alpha", c.data.dirichlet_alpha},
               {"samples_log_mean", c.data.samples_log_mean},
               {"samples_log_sigma", c.data.samples_log_sigma},
               {"min_samples", c.data.min_samples},
               {"label_noise_frac", c.data.label_noise_frac},
               {"class_mean_scale", c.data.class_mean_scale},
               {"test_fraction", c.data.test_fraction},
               {"hidden_dim", c.data.hidden_dim}};
  j["trace"] = {{"trace_path", c.trace.trace_path},
                {"heterogeneity_spread", c.trace.heterogeneity_spread},
                {"batch_latency_median_s", c.trace.batch_latency_median_s},
                {"net_latency_median_s", c.trace.net_latency_median_s},
                {"jitter_sigma", c.trace.jitter_sigma},
                {"pre_fl_samples", c.trace.pre_fl_samples}};
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse failure: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace fedbal
