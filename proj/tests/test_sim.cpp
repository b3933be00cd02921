#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "fedbal/io.hpp"
#include "fedbal/sim.hpp"

using namespace fedbal;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.num_clients = 8;
  c.cohort_size = 4;
  c.local_epochs = 2;
  c.batch_size = 10;
  c.learning_rate = 0.05;
  c.rounds = 5;
  c.seed = 3;
  c.method = Method::kProx;
  c.deadline_policy = DeadlinePolicy::kWaitForAll;
  c.data.input_dim = 6;
  c.data.num_classes = 3;
  c.data.samples_log_mean = 3.2;  // small datasets keep the test quick
  c.data.samples_log_sigma = 0.2;
  c.trace.heterogeneity_spread = 4.0;
  return c;
}

}  // namespace

TEST_CASE("rounds=0 executes nothing and keeps the initial model") {
  auto cfg = small_config();
  cfg.rounds = 0;
  Experiment a(cfg);
  Experiment b(cfg);
  const auto before = b.weights().values;
  const auto recs = a.run_experiment();
  CHECK(recs.empty());
  CHECK(a.weights().values == before);
}

TEST_CASE("identical configs give identical runs") {
  const auto cfg = small_config();
  Experiment a(cfg);
  Experiment b(cfg);
  const auto ra = a.run_experiment();
  const auto rb = b.run_experiment();
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].cohort == rb[i].cohort);
    CHECK(ra[i].completed == rb[i].completed);
    CHECK(ra[i].wallclock == rb[i].wallclock);
    CHECK(ra[i].test_accuracy == rb[i].test_accuracy);
  }
  CHECK(a.weights().values == b.weights().values);
}

TEST_CASE("rounds.csv output is identical for 1 and 8 worker threads") {
  const auto cfg = small_config();
  setenv("FEDBAL_THREADS", "1", 1);
  Experiment a(cfg);
  const auto ra = a.run_experiment();
  setenv("FEDBAL_THREADS", "8", 1);
  Experiment b(cfg);
  const auto rb = b.run_experiment();
  unsetenv("FEDBAL_THREADS");
  CHECK(rounds_csv(ra) == rounds_csv(rb));
  CHECK(a.weights().values == b.weights().values);
}

TEST_CASE("fedavg and prox agree exactly at mu=0 with no deadline pressure") {
  auto cfg = small_config();
  cfg.method = Method::kFedAvg;
  Experiment a(cfg);
  cfg.method = Method::kProx;
  Experiment b(cfg);
  a.run_experiment();
  b.run_experiment();
  CHECK(a.weights().values == b.weights().values);
}

TEST_CASE("a round with zero completers leaves the model unchanged") {
  // Two clients, cohort of one, FedAvg against the mean-completion deadline:
  // rounds that pick the slow client must time out and change nothing.
  ExperimentConfig cfg;
  cfg.num_clients = 2;
  cfg.cohort_size = 1;
  cfg.local_epochs = 2;
  cfg.rounds = 12;
  cfg.seed = 5;
  cfg.method = Method::kFedAvg;
  cfg.deadline_policy = DeadlinePolicy::kFixed1T;
  cfg.data.input_dim = 4;
  cfg.data.num_classes = 2;
  cfg.data.samples_log_mean = 3.5;
  cfg.trace.heterogeneity_spread = 12.0;
  cfg.trace.jitter_sigma = 0.01;
  Experiment exp(cfg);
  int empty_rounds = 0;
  for (int r = 1; r <= cfg.rounds; ++r) {
    const auto before = exp.weights().values;
    const auto rec = exp.run_round(r);
    if (rec.completed.empty()) {
      ++empty_rounds;
      CHECK(exp.weights().values == before);
      CHECK(rec.duration == rec.deadline);
      CHECK(rec.timed_out.size() == 1);
    }
  }
  CHECK(empty_rounds > 0);
}

TEST_CASE("loss threshold starts at zero and moves once metadata arrives") {
  auto cfg = small_config();
  cfg.method = Method::kFedBalancer;
  cfg.deadline_policy = DeadlinePolicy::kAdaptiveDdlE;
  cfg.rounds = 6;
  cfg.fb_params.ltr_init = 0.5;
  Experiment exp(cfg);
  const auto recs = exp.run_experiment();
  CHECK(recs[0].loss_threshold == 0.0);
  bool moved = false;
  for (std::size_t i = 1; i < recs.size(); ++i)
    if (recs[i].loss_threshold > 0.0) moved = true;
  CHECK(moved);
}

TEST_CASE("wallclock is strictly increasing and durations are consistent") {
  const auto cfg = small_config();
  Experiment exp(cfg);
  const auto recs = exp.run_experiment();
  double prev = 0.0;
  for (const auto& r : recs) {
    CHECK(r.duration > 0.0);
    CHECK(r.wallclock == doctest::Approx(prev + r.duration).epsilon(1e-12));
    prev = r.wallclock;
  }
  CHECK(exp.wallclock() == recs.back().wallclock);
}

TEST_CASE("fixed policies hold the deadline constant; 2T doubles 1T") {
  auto cfg = small_config();
  cfg.method = Method::kFedAvg;
  cfg.deadline_policy = DeadlinePolicy::kFixed1T;
  Experiment one(cfg);
  const auto r1 = one.run_experiment();
  for (const auto& r : r1) CHECK(r.deadline == r1[0].deadline);

  cfg.deadline_policy = DeadlinePolicy::kFixed2T;
  Experiment two(cfg);
  const auto r2 = two.run_experiment();
  CHECK(r2[0].deadline == doctest::Approx(2.0 * r1[0].deadline));
}

TEST_CASE("adaptive deadlines are finite and at least the scan floor") {
  auto cfg = small_config();
  cfg.method = Method::kFedBalancer;
  cfg.deadline_policy = DeadlinePolicy::kAdaptiveDdlE;
  Experiment exp(cfg);
  for (const auto& r : exp.run_experiment()) {
    CHECK(std::isfinite(r.deadline));
    CHECK(r.deadline >= 1.0);
  }
}

TEST_CASE("wait_for_all never times anyone out") {
  const auto cfg = small_config();
  Experiment exp(cfg);
  for (const auto& r : exp.run_experiment()) {
    CHECK(r.timed_out.empty());
    CHECK(r.completed.size() == static_cast<std::size_t>(cfg.cohort_size));
  }
}

TEST_CASE("wallclock budget stops the run once spent") {
  auto cfg = small_config();
  cfg.rounds = 3;  // ignored once the budget is set
  Experiment probe(cfg);
  const auto first = probe.run_round(1);
  cfg.wallclock_budget_s = 2.5 * first.duration;
  Experiment exp(cfg);
  const auto recs = exp.run_experiment();
  CHECK(recs.size() >= 2);
  CHECK(recs.back().wallclock >= *cfg.wallclock_budget_s);
  CHECK(recs[recs.size() - 2].wallclock < *cfg.wallclock_budget_s);
}

TEST_CASE("stat_util selection still produces full, valid cohorts") {
  auto cfg = small_config();
  cfg.method = Method::kFedBalancer;
  cfg.deadline_policy = DeadlinePolicy::kAdaptiveDdlE;
  cfg.client_selection = ClientSelection::kStatUtil;
  Experiment exp(cfg);
  for (const auto& r : exp.run_experiment()) {
    CHECK(r.cohort.size() == static_cast<std::size_t>(cfg.cohort_size));
    for (const int id : r.cohort) {
      CHECK(id >= 0);
      CHECK(id < cfg.num_clients);
    }
  }
}
