#pragma once

// Server-side round planning and aggregation: loss-threshold selection,
// ltr/ddlr feedback control, DDL-E deadline search, client selection, and
// FedAvg/Prox weighted aggregation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "fedbal/client.hpp"
#include "fedbal/config.hpp"
#include "fedbal/data.hpp"
#include "fedbal/model.hpp"
#include "fedbal/rng.hpp"

namespace fedbal {

struct ServerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ControllerState {
  double ltr = 0.0;
  double ddlr = 1.0;
  std::vector<double> utility_history;
  FbParams params;
};

// lt_{R+1} = ll + (lh - ll) * ltr with ll = min(LLow_R), lh = mean(LHigh_R).
// Noise can invert the interval; fall back to ll in that case.
inline double select_loss_threshold(const std::vector<double>& llow_list,
                                    const std::vector<double>& lhigh_list, double ltr) {
  if (llow_list.empty() || lhigh_list.empty())
    throw ServerError("select_loss_threshold: empty metadata lists");
  const double ll = *std::min_element(llow_list.begin(), llow_list.end());
  const double lh = mean_of(lhigh_list);
  if (lh < ll) return ll;
  return ll + (lh - ll) * ltr;
}

// Appends U_R = LSum_R / (L_R * ddl_R) and, every w rounds once 2w rounds of
// history exist, steps ltr/ddlr in opposite directions by lss/dss with
// clamping to [0, 1].
inline void update_controller(ControllerState& state, double lsum_r, double l_r, double ddl_r,
                              int round_r) {
  const double u = (l_r <= 0.0 || !std::isfinite(ddl_r) || ddl_r <= 0.0)
                       ? 0.0
                       : lsum_r / (l_r * ddl_r);
  state.utility_history.push_back(u);
  const int w = state.params.w;
  if (round_r % w != 0 || round_r < 2 * w) return;
  const auto& hist = state.utility_history;
  const std::size_t r = static_cast<std::size_t>(round_r);
  double older = 0.0, newer = 0.0;
  for (std::size_t i = r - 2 * static_cast<std::size_t>(w); i < r - static_cast<std::size_t>(w); ++i)
    older += hist[i];
  for (std::size_t i = r - static_cast<std::size_t>(w); i < r; ++i) newer += hist[i];
  if (older > newer) {
    state.ltr = std::min(state.ltr + state.params.lss, 1.0);
    state.ddlr = std::max(state.ddlr - state.params.dss, 0.0);
  } else {
    state.ltr = std::max(state.ltr - state.params.lss, 0.0);
    state.ddlr = std::min(state.ddlr + state.params.dss, 1.0);
  }
}

struct ClientCapability {
  double mean_download = 0.0;
  double mean_upload = 0.0;
  std::vector<double> batch_latency_obs;  // k pre-FL samples plus per-round telemetry
  double last_ot_len = 0.0;               // last reported (noised) |OT|; dataset size before any report
};

struct CapabilityTable {
  std::map<int, ClientCapability> clients;
};

// Predicted training seconds: ceiling batch count of ot_len samples, times
// mean batch latency, times epochs. The literal (len-1)/batch reading is kept
// behind a toggle.
inline double train_time_estimate(double mean_batch_latency, double ot_len, int batch_size,
                                  int num_epochs, bool literal = false) {
  if (ot_len < 1.0) ot_len = 1.0;
  double batches;
  if (literal)
    batches = (ot_len - 1.0) / static_cast<double>(batch_size);
  else
    batches = std::floor((ot_len - 1.0) / static_cast<double>(batch_size)) + 1.0;
  return batches * mean_batch_latency * static_cast<double>(num_epochs);
}

inline double predicted_completion(const ClientCapability& cap, int batch_size, int num_epochs,
                                   bool literal = false) {
  return cap.mean_download + cap.mean_upload +
         train_time_estimate(mean_of(cap.batch_latency_obs), cap.last_ot_len, batch_size,
                             num_epochs, literal);
}

// Scans integer deadlines t = 1, 2, ... until every cohort member completes,
// maximizing DDL-E(t) = |{i : completeTime_i <= t}| / t. Returns the smallest
// t achieving the maximum.
inline double peak_ddl_e_from_times(const std::vector<double>& completion_times) {
  if (completion_times.empty()) throw ServerError("find_peak_ddl_e: empty cohort");
  const std::size_t n = completion_times.size();
  double best_value = -1.0;
  double best_t = 1.0;
  std::size_t completed = 0;
  for (double t = 1.0; completed != n; t += 1.0) {
    completed = 0;
    for (const double c : completion_times)
      if (c <= t) ++completed;
    const double value = static_cast<double>(completed) / t;
    if (value > best_value) {
      best_value = value;
      best_t = t;
    }
  }
  return best_t;
}

inline std::vector<double> cohort_completion_times(const CapabilityTable& capabilities,
                                                   const std::vector<int>& cohort, int batch_size,
                                                   int num_epochs, bool literal = false) {
  std::vector<double> times;
  times.reserve(cohort.size());
  for (const int id : cohort) {
    const auto it = capabilities.clients.find(id);
    if (it == capabilities.clients.end())
      throw ServerError("no capability data for client " + std::to_string(id));
    times.push_back(predicted_completion(it->second, batch_size, num_epochs, literal));
  }
  return times;
}

inline double find_peak_ddl_e(const CapabilityTable& capabilities, const std::vector<int>& cohort,
                              int num_epochs, int batch_size, bool literal = false) {
  return peak_ddl_e_from_times(cohort_completion_times(capabilities, cohort, batch_size, num_epochs, literal));
}

// ddl_{R+1} = dl + (dh - dl) * ddlr, where dl/dh are the peak-DDL-E deadlines
// at 1 and E local epochs.
inline double select_deadline(const CapabilityTable& capabilities, const std::vector<int>& cohort,
                              int num_epochs, double ddlr, int batch_size, bool literal = false) {
  const double dl = find_peak_ddl_e(capabilities, cohort, 1, batch_size, literal);
  const double dh = find_peak_ddl_e(capabilities, cohort, num_epochs, batch_size, literal);
  return dl + (dh - dl) * ddlr;
}

// StatUtil(i) = |OT| * sqrt(sum of OT loss squares / |OT|). Noised inputs are
// clamped to >= 0 first.
inline double stat_util(double ot_loss_sq_sum, double ot_len) {
  ot_loss_sq_sum = std::max(0.0, ot_loss_sq_sum);
  ot_len = std::max(0.0, ot_len);
  if (ot_len == 0.0) return 0.0;
  return ot_len * std::sqrt(ot_loss_sq_sum / ot_len);
}

// Cohort selection. In stat_util mode an epsilon fraction of the K slots is
// filled uniformly from the non-top remainder; clients never seen carry +inf
// utility once so everyone gets initial coverage.
inline std::vector<int> select_cohort(const std::vector<int>& all_clients, int k,
                                      ClientSelection mode,
                                      const std::map<int, double>& last_utilities,
                                      RandomStream& rng, double epsilon = 0.1) {
  const int n = static_cast<int>(all_clients.size());
  if (k > n) throw ServerError("cohort size exceeds client count");
  std::vector<int> cohort;
  if (mode == ClientSelection::kRandom || k == n) {
    for (const std::size_t idx :
         rng.sample_without_replacement(static_cast<std::size_t>(n), static_cast<std::size_t>(k)))
      cohort.push_back(all_clients[idx]);
  } else {
    std::vector<std::pair<double, int>> ranked;  // (-utility, id) for stable ascending sort
    ranked.reserve(all_clients.size());
    for (const int id : all_clients) {
      const auto it = last_utilities.find(id);
      const double u = it == last_utilities.end() ? std::numeric_limits<double>::infinity() : it->second;
      ranked.emplace_back(-u, id);
    }
    std::sort(ranked.begin(), ranked.end());
    const int explore = std::min(k, static_cast<int>(std::floor(epsilon * static_cast<double>(k))));
    const int exploit = k - explore;
    for (int i = 0; i < exploit; ++i) cohort.push_back(ranked[static_cast<std::size_t>(i)].second);
    if (explore > 0) {
      std::vector<int> remainder;
      for (int i = exploit; i < n; ++i) remainder.push_back(ranked[static_cast<std::size_t>(i)].second);
      for (const std::size_t idx :
           rng.sample_without_replacement(remainder.size(), static_cast<std::size_t>(explore)))
        cohort.push_back(remainder[idx]);
    }
  }
  std::sort(cohort.begin(), cohort.end());
  return cohort;
}

// Weighted average of the reported client weights, weights n_k / sum(n_k)
// over completing clients only. Identical for FedAvg and Prox.
inline WeightVector aggregate(const std::vector<ClientReport>& reports,
                              const WeightVector& global_weights) {
  if (reports.empty()) return global_weights;
  double total = 0.0;
  for (const auto& r : reports) total += static_cast<double>(r.num_samples);
  if (total <= 0.0) return global_weights;
  WeightVector out = global_weights;
  std::vector<double> acc(global_weights.values.size(), 0.0);
  for (const auto& r : reports) {
    const double wk = static_cast<double>(r.num_samples) / total;
    for (std::size_t i = 0; i < acc.size(); ++i)
      acc[i] += wk * (global_weights.values[i] + r.weight_delta[i]);
  }
  out.values = std::move(acc);
  return out;
}

// Pre-FL mean full-round completion time T over all clients: mean network
// transfer plus full-data training for E epochs at each client's pre-FL mean
// batch latency.
inline double pre_fl_mean_completion(const std::vector<ClientProfile>& profiles, int epochs,
                                     int batch_size) {
  if (profiles.empty()) throw ServerError("pre_fl_mean_completion: no profiles");
  double sum = 0.0;
  for (const auto& p : profiles) {
    const double t = mean_of(p.download_samples) + mean_of(p.upload_samples) +
                     train_time_estimate(mean_of(p.batch_latency_samples),
                                         static_cast<double>(p.dataset.size()), batch_size, epochs);
    sum += t;
  }
  return sum / static_cast<double>(profiles.size());
}

// Fixed and percentile baseline deadline policies. `mean_completion_1t` is
// the pre-FL T; SmartPC takes the 80th-percentile predicted completion of
// the round's cohort.
inline double baseline_deadline(DeadlinePolicy policy, double mean_completion_1t,
                                const CapabilityTable& capabilities, const std::vector<int>& cohort,
                                int epochs, int batch_size) {
  switch (policy) {
    case DeadlinePolicy::kFixed1T:
      return mean_completion_1t;
    case DeadlinePolicy::kFixed2T:
      return 2.0 * mean_completion_1t;
    case DeadlinePolicy::kSmartPc: {
      std::vector<double> times = cohort_completion_times(capabilities, cohort, batch_size, epochs);
      std::sort(times.begin(), times.end());
      const std::size_t covered = static_cast<std::size_t>(
          std::ceil(0.8 * static_cast<double>(times.size())));
      return times[std::max<std::size_t>(covered, 1) - 1];
    }
    case DeadlinePolicy::kWaitForAll:
      return std::numeric_limits<double>::infinity();
    case DeadlinePolicy::kAdaptiveDdlE:
      throw ServerError("adaptive policy handled by select_deadline");
  }
  throw ServerError("unknown deadline policy");
}

}  // namespace fedbal
