#pragma once

// Synthetic non-IID dataset generation (Dirichlet label skew over per-class
// Gaussians), latency-trace generation, and trace ingestion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedbal/model.hpp"
#include "fedbal/rng.hpp"

namespace fedbal {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ClientTrace {
  int id = 0;
  std::vector<double> download_s;
  std::vector<double> upload_s;
  std::vector<double> batch_latency_s;
};

struct TraceFile {
  std::vector<ClientTrace> clients;
};

struct SyntheticData {
  std::vector<DatasetHandle> clients;
  DatasetHandle test;                        // server-held IID split, uniform classes
  std::vector<std::vector<double>> class_means;
};

struct SyntheticOptions {
  int num_clients = 10;
  int input_dim = 20;
  int num_classes = 5;
  double dirichlet_alpha = 0.5;
  double samples_log_mean = 4.6;
  double samples_log_sigma = 0.45;
  int min_samples = 10;
  double label_noise_frac = 0.05;
  double class_mean_scale = 0.35;
  double test_fraction = 0.1;
};

inline std::vector<double> dirichlet(RandomStream& rng, double alpha, int k) {
  std::vector<double> v(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (double& x : v) {
    x = rng.gamma(alpha);
    sum += x;
  }
  if (sum <= 0.0) sum = 1.0;
  for (double& x : v) x /= sum;
  return v;
}

inline int sample_categorical(RandomStream& rng, const std::vector<double>& probs) {
  double u = rng.uniform();
  for (std::size_t j = 0; j < probs.size(); ++j) {
    u -= probs[j];
    if (u < 0.0) return static_cast<int>(j);
  }
  return static_cast<int>(probs.size()) - 1;
}

inline SyntheticData gen_synthetic(const SyntheticOptions& opt, RandomStream& rng) {
  if (opt.dirichlet_alpha <= 0.0) throw DataError("dirichlet_alpha must be > 0");
  if (opt.label_noise_frac < 0.0 || opt.label_noise_frac >= 1.0)
    throw DataError("label_noise_frac outside [0,1)");
  if (opt.num_classes < 2 || opt.input_dim < 1 || opt.num_clients < 1)
    throw DataError("degenerate synthetic parameters");

  SyntheticData out;
  out.class_means.resize(static_cast<std::size_t>(opt.num_classes));
  for (auto& mean : out.class_means) {
    mean.resize(static_cast<std::size_t>(opt.input_dim));
    for (double& x : mean) x = opt.class_mean_scale * rng.normal();
  }

  std::size_t total = 0;
  out.clients.reserve(static_cast<std::size_t>(opt.num_clients));
  for (int id = 0; id < opt.num_clients; ++id) {
    const std::vector<double> props = dirichlet(rng, opt.dirichlet_alpha, opt.num_classes);
    const double raw = std::exp(rng.normal(opt.samples_log_mean, opt.samples_log_sigma));
    const int n = std::max(opt.min_samples, static_cast<int>(std::lround(raw)));
    DatasetHandle ds;
    ds.input_dim = opt.input_dim;
    ds.owner = id;
    ds.labels.reserve(static_cast<std::size_t>(n));
    ds.features.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(opt.input_dim));
    for (int s = 0; s < n; ++s) {
      const int true_class = sample_categorical(rng, props);
      const auto& mean = out.class_means[static_cast<std::size_t>(true_class)];
      for (int d = 0; d < opt.input_dim; ++d)
        ds.features.push_back(mean[static_cast<std::size_t>(d)] + rng.normal());
      int label = true_class;
      if (opt.label_noise_frac > 0.0 && rng.uniform() < opt.label_noise_frac)
        label = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(opt.num_classes)));
      ds.labels.push_back(label);
    }
    total += ds.size();
    out.clients.push_back(std::move(ds));
  }

  // IID test split: uniform classes, drawn fresh from the same class
  // Gaussians and never assigned to any client.
  const int n_test = std::max(1, static_cast<int>(std::lround(opt.test_fraction * static_cast<double>(total))));
  out.test.input_dim = opt.input_dim;
  out.test.owner = -1;
  for (int s = 0; s < n_test; ++s) {
    const int cls = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(opt.num_classes)));
    const auto& mean = out.class_means[static_cast<std::size_t>(cls)];
    for (int d = 0; d < opt.input_dim; ++d)
      out.test.features.push_back(mean[static_cast<std::size_t>(d)] + rng.normal());
    out.test.labels.push_back(cls);
  }
  return out;
}

struct TraceGenOptions {
  int num_clients = 10;
  double batch_latency_median_s = 0.05;
  double net_latency_median_s = 1.0;
  double net_log_sigma = 0.3;
  double heterogeneity_spread = 12.0;  // ratio between slowest and fastest mean batch latency
  double jitter_sigma = 0.05;
  int samples_per_client = 10;
};

inline TraceFile gen_traces(const TraceGenOptions& opt, RandomStream& rng) {
  if (opt.heterogeneity_spread < 1.0) throw DataError("heterogeneity_spread must be >= 1");
  if (opt.samples_per_client < 1) throw DataError("samples_per_client must be >= 1");

  // Geometric ladder of per-client mean batch latencies spanning exactly
  // `spread`x, shuffled so client id does not correlate with speed.
  std::vector<double> scales(static_cast<std::size_t>(opt.num_clients), 1.0);
  if (opt.num_clients > 1) {
    for (int i = 0; i < opt.num_clients; ++i)
      scales[static_cast<std::size_t>(i)] =
          std::pow(opt.heterogeneity_spread, static_cast<double>(i) / static_cast<double>(opt.num_clients - 1));
    rng.shuffle(scales);
  }

  // Draws lognormal jitter around `mean`, then rescales so the list's
  // empirical mean equals `mean` exactly.
  auto jittered = [&](double mean, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (double& x : v) {
      x = mean * std::exp(opt.jitter_sigma * rng.normal());
      sum += x;
    }
    const double correction = mean * static_cast<double>(n) / sum;
    for (double& x : v) x *= correction;
    return v;
  };

  TraceFile tf;
  tf.clients.reserve(static_cast<std::size_t>(opt.num_clients));
  for (int id = 0; id < opt.num_clients; ++id) {
    ClientTrace ct;
    ct.id = id;
    const double batch_mean = opt.batch_latency_median_s * scales[static_cast<std::size_t>(id)];
    const double net_mean = opt.net_latency_median_s * std::exp(opt.net_log_sigma * rng.normal());
    ct.batch_latency_s = jittered(batch_mean, opt.samples_per_client);
    ct.download_s = jittered(net_mean, opt.samples_per_client);
    ct.upload_s = jittered(net_mean, opt.samples_per_client);
    tf.clients.push_back(std::move(ct));
  }
  return tf;
}

inline void validate_trace(const TraceFile& tf) {
  std::vector<int> ids;
  for (const auto& c : tf.clients) {
    if (c.download_s.empty()) throw DataError("client " + std::to_string(c.id) + ": empty download_s");
    if (c.upload_s.empty()) throw DataError("client " + std::to_string(c.id) + ": empty upload_s");
    if (c.batch_latency_s.empty())
      throw DataError("client " + std::to_string(c.id) + ": empty batch_latency_s");
    for (const auto* list : {&c.download_s, &c.upload_s, &c.batch_latency_s})
      for (const double v : *list)
        if (!(v > 0.0)) throw DataError("client " + std::to_string(c.id) + ": non-positive latency sample");
    ids.push_back(c.id);
  }
  std::sort(ids.begin(), ids.end());
  const auto dup = std::adjacent_find(ids.begin(), ids.end());
  if (dup != ids.end()) throw DataError("duplicate client id " + std::to_string(*dup));
}

// Trace file format: JSON lines, one client record per line with fields
// {"id": int, "download_s": [...], "upload_s": [...], "batch_latency_s": [...]}.
inline TraceFile load_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trace file: " + path);
  TraceFile tf;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ClientTrace ct;
      ct.id = j.at("id").get<int>();
      ct.download_s = j.at("download_s").get<std::vector<double>>();
      ct.upload_s = j.at("upload_s").get<std::vector<double>>();
      ct.batch_latency_s = j.at("batch_latency_s").get<std::vector<double>>();
      tf.clients.push_back(std::move(ct));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("trace parse error at line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_trace(tf);
  return tf;
}

inline void save_traces(const TraceFile& tf, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trace file: " + path);
  for (const auto& c : tf.clients) {
    nlohmann::json j{{"id", c.id},
                     {"download_s", c.download_s},
                     {"upload_s", c.upload_s},
                     {"batch_latency_s", c.batch_latency_s}};
    out << j.dump() << "\n";
  }
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace fedbal
