#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

// FEDBAL_CLI_PATH is injected by the build; these tests drive the real binary.

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "fedbal_cli_test.log";
  const std::string cmd = std::string(FEDBAL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_small_config(const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path p = dir / "config.json";
  std::ofstream out(p);
  out << R"({
    "num_clients": 6, "cohort_size": 3, "local_epochs": 1, "rounds": 3,
    "seed": 11, "method": "prox", "deadline_policy": "wait_for_all",
    "accuracy_targets": [0.2],
    "data": {"input_dim": 4, "num_classes": 2, "samples_log_mean": 3.0}
  })";
  return p;
}

}  // namespace

TEST_CASE("run writes the three artifacts and is reproducible byte-for-byte") {
  const fs::path base = fs::temp_directory_path() / "fedbal_cli_run";
  fs::remove_all(base);
  const fs::path cfg = write_small_config(base);
  const fs::path out1 = base / "out1";
  const fs::path out2 = base / "out2";

  const auto r1 = run_cli("run --config " + cfg.string() + " --out " + out1.string());
  CHECK(r1.exit_code == 0);
  CHECK(fs::exists(out1 / "rounds.csv"));
  CHECK(fs::exists(out1 / "summary.json"));
  CHECK(fs::exists(out1 / "final_weights.json"));

  const auto r2 = run_cli("run --config " + cfg.string() + " --out " + out2.string());
  CHECK(r2.exit_code == 0);
  CHECK(slurp(out1 / "rounds.csv") == slurp(out2 / "rounds.csv"));
  CHECK(slurp(out1 / "summary.json") == slurp(out2 / "summary.json"));
  CHECK(slurp(out1 / "final_weights.json") == slurp(out2 / "final_weights.json"));

  const std::string csv = slurp(out1 / "rounds.csv");
  CHECK(csv.rfind("round,wallclock_s,deadline_s,loss_threshold,ltr,ddlr,n_completed,n_timed_out,"
                  "U_R,test_accuracy\n", 0) == 0);
  fs::remove_all(base);
}

TEST_CASE("--seed overrides the config seed in summary.json") {
  const fs::path base = fs::temp_directory_path() / "fedbal_cli_seed";
  fs::remove_all(base);
  const fs::path cfg = write_small_config(base);
  const fs::path out = base / "out";
  const auto r = run_cli("run --config " + cfg.string() + " --out " + out.string() + " --seed 77");
  CHECK(r.exit_code == 0);
  const auto j = nlohmann::json::parse(slurp(out / "summary.json"));
  CHECK(j.at("seed").get<int>() == 77);
  fs::remove_all(base);
}

TEST_CASE("unwritable output directory fails with a nonzero exit") {
  const fs::path base = fs::temp_directory_path() / "fedbal_cli_bad";
  fs::remove_all(base);
  const fs::path cfg = write_small_config(base);
  const auto r = run_cli("run --config " + cfg.string() + " --out /proc/fedbal_no_such_dir/x");
  CHECK(r.exit_code == 2);
  fs::remove_all(base);
}

TEST_CASE("bad usage exits with code 1") {
  CHECK(run_cli("run --config only_config.json").exit_code == 1);
  CHECK(run_cli("no-such-subcommand").exit_code == 1);
}

TEST_CASE("missing config file exits with code 2") {
  const fs::path base = fs::temp_directory_path() / "fedbal_cli_missing";
  fs::remove_all(base);
  fs::create_directories(base);
  const auto r = run_cli("run --config " + (base / "nope.json").string() + " --out " +
                         (base / "out").string());
  CHECK(r.exit_code == 2);
  fs::remove_all(base);
}

TEST_CASE("compare over two identical runs reports speedup 1") {
  const fs::path base = fs::temp_directory_path() / "fedbal_cli_cmp";
  fs::remove_all(base);
  const fs::path cfg = write_small_config(base);
  const fs::path runs = base / "runs";
  CHECK(run_cli("run --config " + cfg.string() + " --out " + (runs / "a").string()).exit_code == 0);
  CHECK(run_cli("run --config " + cfg.string() + " --out " + (runs / "b").string()).exit_code == 0);
  const auto r = run_cli("compare --runs " + runs.string());
  CHECK(r.exit_code == 0);
  // Same method, same seed: both runs hit the shared target at the same time.
  CHECK(r.output.find("baseline=prox") != std::string::npos);
  CHECK(r.output.find("prox,2,1,0,") != std::string::npos);
  fs::remove_all(base);
}

TEST_CASE("compare needs at least two runs") {
  const fs::path base = fs::temp_directory_path() / "fedbal_cli_cmp1";
  fs::remove_all(base);
  const fs::path cfg = write_small_config(base);
  const fs::path runs = base / "runs";
  CHECK(run_cli("run --config " + cfg.string() + " --out " + (runs / "a").string()).exit_code == 0);
  CHECK(run_cli("compare --runs " + runs.string()).exit_code == 2);
  fs::remove_all(base);
}

TEST_CASE("ddl-profile reproduces the worked deadline curve") {
  const fs::path base = fs::temp_directory_path() / "fedbal_cli_ddl";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path trace = base / "trace.jsonl";
  {
    // Completion times 5, 6, 20 at one batch per epoch.
    std::ofstream out(trace);
    out << R"({"id": 0, "download_s": [2.0], "upload_s": [2.0], "batch_latency_s": [1.0]})" << "\n";
    out << R"({"id": 1, "download_s": [2.0], "upload_s": [2.0], "batch_latency_s": [2.0]})" << "\n";
    out << R"({"id": 2, "download_s": [2.0], "upload_s": [2.0], "batch_latency_s": [16.0]})" << "\n";
  }
  const auto r = run_cli("ddl-profile --trace " + trace.string() + " --epochs 1 --batch 10");
  CHECK(r.exit_code == 0);
  CHECK(r.output.rfind("t,ddl_e\n", 0) == 0);
  CHECK(r.output.find("\n6,0.3333333333\n") != std::string::npos);
  CHECK(r.output.find("peak,6,0.3333333333") != std::string::npos);
  fs::remove_all(base);
}
