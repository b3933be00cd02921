#pragma once

// Deterministic round engine: plan -> client execution -> deadline
// enforcement -> aggregation -> controller update, with simulated wall-clock
// accounting. Client work items may run on a worker pool; results are
// consumed in client-id order so scheduling never affects output.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "fedbal/client.hpp"
#include "fedbal/config.hpp"
#include "fedbal/data.hpp"
#include "fedbal/model.hpp"
#include "fedbal/rng.hpp"
#include "fedbal/server.hpp"

namespace fedbal {

struct RoundRecord {
  int round_index = 0;
  double deadline = 0.0;
  double loss_threshold = 0.0;
  double ltr = 0.0;
  double ddlr = 0.0;
  std::vector<int> cohort;
  std::vector<int> completed;
  std::vector<int> timed_out;
  double duration = 0.0;
  double wallclock = 0.0;  // cumulative
  double test_accuracy = 0.0;
  double utility = 0.0;    // U_R
  // Diagnostic: fraction of known ledger losses above the round-1 global
  // median. Not part of the CSV schema.
  double frac_above_round1_median = 0.0;
};

inline int worker_pool_size() {
  if (const char* env = std::getenv("FEDBAL_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

class Experiment {
 public:
  explicit Experiment(const ExperimentConfig& config) : cfg_(config) {
    validate_config(cfg_);
    build_data();
    build_clients();
    RandomStream init_rng = seeded_rng(cfg_.seed, StreamPurpose::kModelInit, 0, 0);
    const ModelLayout layout{cfg_.data.input_dim, cfg_.data.hidden_dim, cfg_.data.num_classes};
    weights_ = init_model(layout, init_rng);
    controller_.params = cfg_.fb_params;
    controller_.ltr = cfg_.fb_params.ltr_init;
    controller_.ddlr = cfg_.fb_params.ddlr_init;
    if (cfg_.deadline_policy == DeadlinePolicy::kFixed1T ||
        cfg_.deadline_policy == DeadlinePolicy::kFixed2T) {
      std::vector<ClientProfile> profiles;
      for (const auto& s : clients_) profiles.push_back(s.profile);
      mean_completion_1t_ = pre_fl_mean_completion(profiles, cfg_.local_epochs, cfg_.batch_size);
    }
    threads_ = worker_pool_size();
  }

  RoundRecord run_round(int round_r) {
    RoundRecord rec;
    rec.round_index = round_r;
    rec.ltr = controller_.ltr;
    rec.ddlr = controller_.ddlr;

    RandomStream cohort_rng =
        seeded_rng(cfg_.seed, StreamPurpose::kCohortSelect, 0, static_cast<std::uint64_t>(round_r));
    std::vector<int> all_ids(clients_.size());
    for (std::size_t i = 0; i < clients_.size(); ++i) all_ids[i] = clients_[i].profile.id;
    rec.cohort = select_cohort(all_ids, cfg_.cohort_size, cfg_.client_selection, utilities_, cohort_rng);

    rec.deadline = plan_deadline(rec.cohort);
    rec.loss_threshold = uses_loss_selection() ? current_lt_ : 0.0;

    RoundPlan plan;
    plan.round_index = round_r;
    plan.loss_threshold = rec.loss_threshold;
    plan.deadline = rec.deadline;
    plan.cohort = rec.cohort;
    plan.model = &weights_;

    const std::vector<ClientRoundResult> results = execute_cohort(plan);

    std::vector<ClientReport> reports;
    double max_completion = 0.0;
    for (const auto& result : results) {
      if (std::holds_alternative<ClientReport>(result)) {
        const auto& r = std::get<ClientReport>(result);
        rec.completed.push_back(r.client_id);
        max_completion = std::max(max_completion, r.completion_time);
        reports.push_back(r);
      } else {
        rec.timed_out.push_back(std::get<TimedOut>(result).client_id);
      }
    }

    weights_ = aggregate(reports, weights_);

    // Telemetry and utility bookkeeping from completed reports.
    double lsum = 0.0, lcount = 0.0;
    std::vector<double> llows, lhighs;
    for (const auto& r : reports) {
      auto& cap = capabilities_.clients.at(r.client_id);
      cap.batch_latency_obs.push_back(r.observed_batch_latency);
      if (uses_loss_selection()) cap.last_ot_len = std::max(1.0, r.meta.ot_len);
      utilities_[r.client_id] = stat_util(r.meta.ot_loss_sq_sum, r.meta.ot_len);
      lsum += r.selected_loss_sum;
      lcount += static_cast<double>(r.selected_count);
      llows.push_back(r.meta.llow);
      lhighs.push_back(r.meta.lhigh);
    }

    if (uses_loss_selection()) {
      rec.utility = (lcount <= 0.0 || !std::isfinite(rec.deadline))
                        ? 0.0
                        : lsum / (lcount * rec.deadline);
      update_controller(controller_, lsum, lcount, rec.deadline, round_r);
      if (!llows.empty())
        current_lt_ = select_loss_threshold(llows, lhighs, controller_.ltr);
      // Empty round: keep the previous threshold.
    }

    if (std::isfinite(rec.deadline) && (!rec.timed_out.empty() || reports.empty()))
      rec.duration = rec.deadline;
    else
      rec.duration = max_completion;
    wallclock_ += rec.duration;
    rec.wallclock = wallclock_;
    rec.test_accuracy = fedbal::test_accuracy(weights_, test_set_);
    rec.frac_above_round1_median = ledger_fraction_above(round_r);
    records_.push_back(rec);
    return rec;
  }

  std::vector<RoundRecord> run_experiment() {
    wallclock_ = 0.0;
    records_.clear();
    int round = 0;
    // Hard cap keeps a wall-clock-budget run from spinning forever on a
    // misconfigured scenario.
    const int max_rounds = cfg_.wallclock_budget_s ? 1000000 : cfg_.rounds;
    while (round < max_rounds) {
      ++round;
      run_round(round);
      if (cfg_.wallclock_budget_s && wallclock_ >= *cfg_.wallclock_budget_s) break;
    }
    return records_;
  }

  const std::vector<RoundRecord>& records() const { return records_; }
  const WeightVector& weights() const { return weights_; }
  const DatasetHandle& test_set() const { return test_set_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  double wallclock() const { return wallclock_; }
  double mean_completion_1t() const { return mean_completion_1t_; }

 private:
  bool uses_loss_selection() const {
    return cfg_.method == Method::kFedBalancer || cfg_.method == Method::kOortBalancer;
  }

  void build_data() {
    RandomStream data_rng = seeded_rng(cfg_.seed, StreamPurpose::kDataGen, 0, 0);
    SyntheticOptions opt;
    opt.num_clients = cfg_.num_clients;
    opt.input_dim = cfg_.data.input_dim;
    opt.num_classes = cfg_.data.num_classes;
    opt.dirichlet_alpha = cfg_.data.dirichlet_alpha;
    opt.samples_log_mean = cfg_.data.samples_log_mean;
    opt.samples_log_sigma = cfg_.data.samples_log_sigma;
    opt.min_samples = cfg_.data.min_samples;
    opt.label_noise_frac = cfg_.data.label_noise_frac;
    opt.class_mean_scale = cfg_.data.class_mean_scale;
    opt.test_fraction = cfg_.data.test_fraction;
    data_ = gen_synthetic(opt, data_rng);
    test_set_ = data_.test;
  }

  void build_clients() {
    TraceFile traces;
    if (!cfg_.trace.trace_path.empty()) {
      traces = load_traces(cfg_.trace.trace_path);
      if (static_cast<int>(traces.clients.size()) < cfg_.num_clients)
        throw DataError("trace file has fewer clients than num_clients");
      traces.clients.resize(static_cast<std::size_t>(cfg_.num_clients));
    } else {
      RandomStream trace_rng = seeded_rng(cfg_.seed, StreamPurpose::kTraceGen, 0, 0);
      TraceGenOptions opt;
      opt.num_clients = cfg_.num_clients;
      opt.batch_latency_median_s = cfg_.trace.batch_latency_median_s;
      opt.net_latency_median_s = cfg_.trace.net_latency_median_s;
      opt.heterogeneity_spread = cfg_.trace.heterogeneity_spread;
      opt.jitter_sigma = cfg_.trace.jitter_sigma;
      opt.samples_per_client = cfg_.trace.pre_fl_samples;
      traces = gen_traces(opt, trace_rng);
    }
    clients_.clear();
    for (int i = 0; i < cfg_.num_clients; ++i) {
      ClientState state;
      state.profile.id = i;
      state.profile.download_samples = traces.clients[static_cast<std::size_t>(i)].download_s;
      state.profile.upload_samples = traces.clients[static_cast<std::size_t>(i)].upload_s;
      state.profile.batch_latency_samples = traces.clients[static_cast<std::size_t>(i)].batch_latency_s;
      state.profile.dataset = data_.clients[static_cast<std::size_t>(i)];
      ClientCapability cap;
      cap.mean_download = mean_of(state.profile.download_samples);
      cap.mean_upload = mean_of(state.profile.upload_samples);
      cap.batch_latency_obs = state.profile.batch_latency_samples;
      cap.last_ot_len = static_cast<double>(state.profile.dataset.size());
      capabilities_.clients[i] = std::move(cap);
      clients_.push_back(std::move(state));
    }
  }

  double plan_deadline(const std::vector<int>& cohort) {
    if (cfg_.deadline_policy == DeadlinePolicy::kAdaptiveDdlE)
      return select_deadline(capabilities_, cohort, cfg_.local_epochs, controller_.ddlr,
                             cfg_.batch_size, cfg_.fb_params.literal_train_time);
    return baseline_deadline(cfg_.deadline_policy, mean_completion_1t_, capabilities_, cohort,
                             cfg_.local_epochs, cfg_.batch_size);
  }

  std::vector<ClientRoundResult> execute_cohort(const RoundPlan& plan) {
    ClientRoundConfig ccfg;
    ccfg.method = cfg_.method;
    ccfg.local_epochs = cfg_.local_epochs;
    ccfg.batch_size = cfg_.batch_size;
    ccfg.learning_rate = cfg_.learning_rate;
    ccfg.prox_mu = cfg_.prox_mu;
    ccfg.sample_ratio_p = cfg_.fb_params.p;
    ccfg.noise_factor = cfg_.noise_factor;
    ccfg.loss_clamp = cfg_.loss_clamp;
    ccfg.llow_percentile = cfg_.fb_params.llow_percentile;
    ccfg.lhigh_percentile = cfg_.fb_params.lhigh_percentile;
    ccfg.seed = cfg_.seed;

    std::vector<ClientRoundResult> results(plan.cohort.size(), TimedOut{});
    const int pool = std::min<int>(threads_, static_cast<int>(plan.cohort.size()));
    if (pool <= 1) {
      for (std::size_t i = 0; i < plan.cohort.size(); ++i)
        results[i] = run_client_round(clients_[static_cast<std::size_t>(plan.cohort[i])], plan, ccfg);
    } else {
      std::atomic<std::size_t> next{0};
      auto worker = [&]() {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= plan.cohort.size()) return;
          results[i] = run_client_round(clients_[static_cast<std::size_t>(plan.cohort[i])], plan, ccfg);
        }
      };
      std::vector<std::thread> workers;
      for (int t = 0; t < pool; ++t) workers.emplace_back(worker);
      for (auto& w : workers) w.join();
    }
    return results;
  }

  double ledger_fraction_above(int round_r) {
    std::vector<double> known;
    for (const auto& s : clients_)
      if (s.ledger.initialized())
        for (const double v : s.ledger.losses) known.push_back(v);
    if (known.empty()) return 0.0;
    if (!round1_median_ && round_r >= 1) round1_median_ = percentile(known, 50.0);
    std::size_t above = 0;
    for (const double v : known)
      if (v > *round1_median_) ++above;
    return static_cast<double>(above) / static_cast<double>(known.size());
  }

  ExperimentConfig cfg_;
  SyntheticData data_;
  DatasetHandle test_set_;
  std::vector<ClientState> clients_;
  CapabilityTable capabilities_;
  std::map<int, double> utilities_;
  ControllerState controller_;
  WeightVector weights_;
  double current_lt_ = 0.0;
  double mean_completion_1t_ = 0.0;
  double wallclock_ = 0.0;
  int threads_ = 1;
  std::optional<double> round1_median_;
  std::vector<RoundRecord> records_;
};

}  // namespace fedbal
