#pragma once

// Per-client round execution: threshold-based sample selection, loss-ledger
// maintenance, local training, and differentially-private metadata assembly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "fedbal/config.hpp"
#include "fedbal/data.hpp"
#include "fedbal/model.hpp"
#include "fedbal/rng.hpp"

namespace fedbal {

// Last-known per-sample losses. Indices are dense over the local dataset.
// Entry versions count updates so tests can assert which entries changed.
struct LossLedger {
  std::vector<double> losses;
  std::vector<std::uint32_t> versions;
  std::optional<int> initialized_round;

  bool initialized() const { return initialized_round.has_value(); }

  void initialize(const std::map<std::size_t, double>& full_pass, std::size_t n, int round,
                  double clamp) {
    losses.assign(n, 0.0);
    versions.assign(n, 0);
    for (const auto& [idx, loss] : full_pass) {
      losses[idx] = std::clamp(loss, 0.0, clamp);
      versions[idx] = 1;
    }
    initialized_round = round;
  }

  void update(const std::map<std::size_t, double>& trained, double clamp) {
    for (const auto& [idx, loss] : trained) {
      losses[idx] = std::clamp(loss, 0.0, clamp);
      ++versions[idx];
    }
  }
};

struct SelectionResult {
  std::vector<std::size_t> selected_indices;
  std::vector<std::size_t> ot_indices;
  std::vector<std::size_t> ut_indices;
  std::size_t L = 0;
  std::size_t S = 0;
  bool used_full_dataset = false;
};

// Max sample count trainable before the deadline, net of the mean network
// transfer time. The transfer subtraction keeps S from being systematically
// optimistic for clients that still must upload after training.
inline std::size_t max_trainable_size(double mean_batch_latency, double deadline, int epochs,
                                      int batch_size, double mean_download, double mean_upload) {
  if (!std::isfinite(deadline)) return std::numeric_limits<std::size_t>::max();
  const double budget = deadline - mean_download - mean_upload;
  if (budget <= 0.0) return 0;
  const double batches = std::floor(budget / (static_cast<double>(epochs) * mean_batch_latency));
  if (batches <= 0.0) return 0;
  return static_cast<std::size_t>(batches) * static_cast<std::size_t>(batch_size);
}

// Threshold split + prioritized draw. L = max(S, |OT|); round(L*p) drawn from
// OT (clamped to |OT|), the shortfall backfilled from the other group so that
// |selected| = min(L, |D|).
inline SelectionResult select_samples(const LossLedger& ledger, double lt, std::size_t S, double p,
                                      RandomStream& rng,
                                      std::optional<std::size_t> fixed_L = std::nullopt) {
  SelectionResult r;
  r.S = S;
  const std::size_t n = ledger.losses.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (ledger.losses[i] >= lt)
      r.ot_indices.push_back(i);
    else
      r.ut_indices.push_back(i);
  }
  if (!fixed_L && S >= n) {
    r.used_full_dataset = true;
    r.L = n;
    r.selected_indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.selected_indices[i] = i;
    return r;
  }
  r.L = fixed_L ? std::min(*fixed_L, n) : std::max(S, r.ot_indices.size());
  std::size_t from_ot = std::min(static_cast<std::size_t>(std::llround(static_cast<double>(r.L) * p)),
                                 r.ot_indices.size());
  std::size_t from_ut = std::min(r.L - from_ot, r.ut_indices.size());
  if (from_ot + from_ut < std::min(r.L, n))
    from_ot = std::min(r.L - from_ut, r.ot_indices.size());
  for (const std::size_t k : rng.sample_without_replacement(r.ot_indices.size(), from_ot))
    r.selected_indices.push_back(r.ot_indices[k]);
  for (const std::size_t k : rng.sample_without_replacement(r.ut_indices.size(), from_ut))
    r.selected_indices.push_back(r.ut_indices[k]);
  return r;
}

// Linear-interpolated percentile of an unsorted list, q in [0, 100].
inline double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

struct ClientMetadata {
  double llow = 0.0;
  double lhigh = 0.0;
  double ot_loss_sq_sum = 0.0;
  double ot_len = 0.0;
};

// DP metadata: each statistic carries independent Gaussian(0, NF^2) noise and
// is clamped to >= 0 afterwards.
inline ClientMetadata build_metadata(const std::vector<double>& ledger_losses,
                                     const std::vector<double>& ot_losses, double noise_factor,
                                     RandomStream& rng, double llow_pct = 0.0,
                                     double lhigh_pct = 80.0) {
  ClientMetadata m;
  m.llow = percentile(ledger_losses, llow_pct);
  m.lhigh = percentile(ledger_losses, lhigh_pct);
  for (const double v : ot_losses) m.ot_loss_sq_sum += v * v;
  m.ot_len = static_cast<double>(ot_losses.size());
  if (noise_factor > 0.0) {
    m.llow = std::max(0.0, m.llow + rng.normal(0.0, noise_factor));
    m.lhigh = std::max(0.0, m.lhigh + rng.normal(0.0, noise_factor));
    m.ot_loss_sq_sum = std::max(0.0, m.ot_loss_sq_sum + rng.normal(0.0, noise_factor));
    m.ot_len = std::max(0.0, m.ot_len + rng.normal(0.0, noise_factor));
  }
  return m;
}

struct ClientReport {
  int client_id = 0;
  std::vector<double> weight_delta;
  int epochs_completed = 0;
  double completion_time = 0.0;
  ClientMetadata meta;
  std::size_t selected_count = 0;   // contribution to L_R
  double selected_loss_sum = 0.0;   // contribution to LSum_R, selection-time ledger losses
  std::size_t num_samples = 0;      // n_k for aggregation weighting (full local dataset size)
  double observed_batch_latency = 0.0;  // telemetry for the server capability table
};

struct TimedOut {
  int client_id = 0;
};

using ClientRoundResult = std::variant<ClientReport, TimedOut>;

struct ClientProfile {
  int id = 0;
  std::vector<double> download_samples;
  std::vector<double> upload_samples;
  std::vector<double> batch_latency_samples;
  DatasetHandle dataset;
};

// Mutable per-client state owned exclusively by its round execution.
struct ClientState {
  ClientProfile profile;
  LossLedger ledger;
};

struct RoundPlan {
  int round_index = 0;
  double loss_threshold = 0.0;
  double deadline = std::numeric_limits<double>::infinity();
  std::vector<int> cohort;
  const WeightVector* model = nullptr;
};

struct ClientRoundConfig {
  Method method = Method::kFedAvg;
  int local_epochs = 1;
  int batch_size = 10;
  double learning_rate = 0.05;
  double prox_mu = 0.0;
  double sample_ratio_p = 1.0;     // fb_params.p
  double noise_factor = 0.0;
  double loss_clamp = 50.0;
  double llow_percentile = 0.0;
  double lhigh_percentile = 80.0;
  std::uint64_t seed = 1;
};

namespace detail {

inline bool uses_loss_selection(Method m) {
  return m == Method::kFedBalancer || m == Method::kOortBalancer ||
         m == Method::kSampleSelectionBaseline;
}

// FedAvg drops clients that miss the deadline; the Prox-style methods let
// clients train fewer epochs instead.
inline bool fedavg_semantics(Method m) { return m == Method::kFedAvg; }

inline std::size_t batches_for(std::size_t n, int batch_size) {
  return (n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
}

}  // namespace detail

// One simulated client round. Latency draws come from the profile's sample
// lists via the (purpose, client, round) streams, so client executions are
// order-independent.
inline ClientRoundResult run_client_round(ClientState& state, const RoundPlan& plan,
                                          const ClientRoundConfig& cfg) {
  const int id = state.profile.id;
  const std::uint64_t round = static_cast<std::uint64_t>(plan.round_index);
  RandomStream lat_rng = seeded_rng(cfg.seed, StreamPurpose::kClientLatency, static_cast<std::uint64_t>(id), round);
  RandomStream sel_rng = seeded_rng(cfg.seed, StreamPurpose::kClientSelect, static_cast<std::uint64_t>(id), round);
  RandomStream train_rng = seeded_rng(cfg.seed, StreamPurpose::kClientTrain, static_cast<std::uint64_t>(id), round);
  RandomStream noise_rng = seeded_rng(cfg.seed, StreamPurpose::kClientNoise, static_cast<std::uint64_t>(id), round);

  const double dl = lat_rng.pick(state.profile.download_samples);
  const double ul = lat_rng.pick(state.profile.upload_samples);
  const double batch_lat = lat_rng.pick(state.profile.batch_latency_samples);

  const DatasetHandle& ds = state.profile.dataset;
  const std::size_t n = ds.size();
  const int batch = cfg.batch_size;
  const int epochs = cfg.local_epochs;

  double compute_time = 0.0;

  // First selection triggers the one-time whole-dataset forward pass; its
  // simulated latency is charged to the client.
  if (detail::uses_loss_selection(cfg.method) && !state.ledger.initialized()) {
    const auto full = forward_losses(*plan.model, ds, all_indices(ds));
    state.ledger.initialize(full, n, plan.round_index, cfg.loss_clamp);
    compute_time += static_cast<double>(detail::batches_for(n, batch)) * batch_lat;
  }

  const double mean_dl = mean_of(state.profile.download_samples);
  const double mean_ul = mean_of(state.profile.upload_samples);
  const double mean_b = mean_of(state.profile.batch_latency_samples);
  const std::size_t S =
      max_trainable_size(mean_b, plan.deadline, epochs, batch, mean_dl, mean_ul);

  auto ledger_loss_sum = [&](const std::vector<std::size_t>& idx) {
    double sum = 0.0;
    for (const std::size_t i : idx) sum += state.ledger.losses[i];
    return sum;
  };

  ClientReport report;
  report.client_id = id;
  report.num_samples = n;
  report.observed_batch_latency = batch_lat;

  WeightVector local = *plan.model;

  if (cfg.method == Method::kOortBalancer) {
    // One threshold-selected batch per local epoch (L fixed to batch size).
    const int max_epochs = epochs;
    double epoch_time = batch_lat;  // one batch per epoch
    int feasible = max_epochs;
    if (std::isfinite(plan.deadline)) {
      const double budget = plan.deadline - dl - ul - compute_time;
      feasible = budget <= 0.0 ? 0 : std::min<int>(max_epochs, static_cast<int>(std::floor(budget / epoch_time)));
    }
    if (feasible < 1) return TimedOut{id};
    for (int e = 0; e < feasible; ++e) {
      SelectionResult sel = select_samples(state.ledger, plan.loss_threshold, S, cfg.sample_ratio_p,
                                           sel_rng, static_cast<std::size_t>(batch));
      if (sel.selected_indices.empty()) break;
      report.selected_count += sel.selected_indices.size();
      report.selected_loss_sum += ledger_loss_sum(sel.selected_indices);
      TrainOutcome out = train_local(local, ds, sel.selected_indices, 1, batch, cfg.learning_rate,
                                     cfg.prox_mu, train_rng);
      local = std::move(out.updated_weights);
      state.ledger.update(out.per_sample_losses, cfg.loss_clamp);
      compute_time += epoch_time;
      report.epochs_completed += 1;
    }
    if (report.epochs_completed < 1) return TimedOut{id};
  } else {
    std::vector<std::size_t> selected;
    std::vector<std::size_t> ot_at_selection;
    switch (cfg.method) {
      case Method::kFedBalancer: {
        SelectionResult sel = select_samples(state.ledger, plan.loss_threshold, S, cfg.sample_ratio_p, sel_rng);
        selected = std::move(sel.selected_indices);
        break;
      }
      case Method::kSampleSelectionBaseline: {
        // Cap at S samples chosen by top loss, ties broken by index.
        selected = all_indices(ds);
        if (S < n) {
          std::stable_sort(selected.begin(), selected.end(), [&](std::size_t a, std::size_t b) {
            return state.ledger.losses[a] > state.ledger.losses[b];
          });
          selected.resize(std::max<std::size_t>(1, S));
          std::sort(selected.begin(), selected.end());
        }
        break;
      }
      default:
        selected = all_indices(ds);
        break;
    }
    if (selected.empty()) return TimedOut{id};

    const double epoch_time =
        static_cast<double>(detail::batches_for(selected.size(), batch)) * batch_lat;
    int train_epochs = epochs;
    if (std::isfinite(plan.deadline)) {
      const double budget = plan.deadline - dl - ul - compute_time;
      const int feasible =
          budget <= 0.0 ? 0 : static_cast<int>(std::floor(budget / epoch_time));
      if (detail::fedavg_semantics(cfg.method)) {
        if (feasible < epochs) return TimedOut{id};
      } else {
        if (feasible < 1) return TimedOut{id};
        train_epochs = std::min(epochs, feasible);
      }
    }

    report.selected_count = selected.size();
    if (state.ledger.initialized()) report.selected_loss_sum = ledger_loss_sum(selected);

    TrainOutcome out = train_local(local, ds, selected, train_epochs, batch, cfg.learning_rate,
                                   cfg.prox_mu, train_rng);
    local = std::move(out.updated_weights);
    report.epochs_completed = out.epochs_completed;
    compute_time += static_cast<double>(train_epochs) * epoch_time;

    if (!state.ledger.initialized())
      state.ledger.initialize(out.per_sample_losses, n, plan.round_index, cfg.loss_clamp);
    else
      state.ledger.update(out.per_sample_losses, cfg.loss_clamp);
  }

  report.completion_time = dl + compute_time + ul;
  if (std::isfinite(plan.deadline) && report.completion_time > plan.deadline) return TimedOut{id};

  // Metadata over the post-training ledger; the OT group is recomputed
  // against this round's threshold.
  if (state.ledger.initialized()) {
    std::vector<double> ot_losses;
    for (const double v : state.ledger.losses)
      if (v >= plan.loss_threshold) ot_losses.push_back(v);
    report.meta = build_metadata(state.ledger.losses, ot_losses, cfg.noise_factor, noise_rng,
                                 cfg.llow_percentile, cfg.lhigh_percentile);
  }

  report.weight_delta.resize(local.values.size());
  for (std::size_t i = 0; i < local.values.size(); ++i)
    report.weight_delta[i] = local.values[i] - plan.model->values[i];
  return report;
}

}  // namespace fedbal
