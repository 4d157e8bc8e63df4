#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "slosim/config.hpp"
#include "slosim/csv.hpp"
#include "slosim/latency_model.hpp"

using namespace slosim;
namespace fs = std::filesystem;

#ifndef SLOSIM_BIN
#define SLOSIM_BIN "slosim"
#endif

namespace {

fs::path scratch_dir() {
    auto dir = fs::temp_directory_path() / "slosim_cli_test";
    fs::create_directories(dir);
    return dir;
}

void write(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(SLOSIM_BIN) + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string small_config(const std::string& extra = "") {
    return R"({
  "model_profile": "qwen7b",
  "workers": 2,
  "workload": {"task_set": "4task", "per_task_count": 5, "qps": 4.0, "seed": 7}
)" + extra +
           "}\n";
}

}  // namespace

TEST_CASE("config defaults resolve builtin profile and tasks") {
    auto cfg = config_from_json(small_config());
    CHECK(cfg.oracle.a == doctest::Approx(0.02));
    CHECK(cfg.estimate.b == cfg.oracle.b);
    CHECK(cfg.workload.tasks.size() == 4);
    CHECK(cfg.policy == DispatchPolicy::slo_aware);
    CHECK(cfg.dispatcher.theta == doctest::Approx(0.5));
}

TEST_CASE("unknown keys are rejected with their line") {
    std::string bad = R"({
  "model_profile": "qwen7b",
  "wrokers": 2
})";
    try {
        config_from_json(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("wrokers") != std::string::npos);
        CHECK(msg.find("line 3") != std::string::npos);
    }
}

TEST_CASE("unknown model profile is rejected") {
    CHECK_THROWS_AS(config_from_json(R"({"model_profile": "gpt99"})"), ConfigError);
}

TEST_CASE("malformed json reports the failing line") {
    try {
        config_from_json("{\n  \"workers\": 2,\n  oops\n}");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("custom coefficients and scheduler profile split oracle and estimate") {
    std::string text = R"({
  "model_profile": "custom",
  "model_coefficients": {"a": 0.1, "b": 1e-4, "c": 0, "a_prime": 0.05, "b_prime": 0, "c_prime": 0},
  "scheduler_model_profile": "qwen7b"
})";
    auto cfg = config_from_json(text);
    CHECK(cfg.oracle.a == doctest::Approx(0.1));
    CHECK(cfg.estimate.a == doctest::Approx(0.02));
}

TEST_CASE("priority mode derives default bounds from the task set") {
    auto cfg = config_from_json(R"({
  "workload": {"task_set": "4task", "priority_mode": true, "per_task_count": 5, "qps": 4.0}
})");
    REQUIRE(cfg.priority.bounds.size() == 4);
    CHECK(cfg.priority.bounds[3].max_ttft == doctest::Approx(25.0));
    CHECK(cfg.workload.tasks[0].priority == 0);
}

TEST_CASE("validation guards reject out-of-range fields") {
    CHECK_THROWS_AS(config_from_json(R"({"theta": 1.5})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"workers": 0})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"workload": {"qps": -1}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"overdue_policy": "drop"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"mode": "sharded"})"), ConfigError);
}

TEST_CASE("cli run writes the three artifacts and exits 0") {
    auto dir = scratch_dir() / "run_ok";
    fs::remove_all(dir);
    auto cfg_path = scratch_dir() / "ok.json";
    write(cfg_path, small_config());
    int rc = run_cli("run --config " + cfg_path.string() + " --out " + dir.string());
    CHECK(rc == 0);
    CHECK(fs::exists(dir / "events.csv"));
    CHECK(fs::exists(dir / "requests.csv"));
    CHECK(fs::exists(dir / "summary.json"));
    auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    CHECK(summary["attainment"].get<double>() >= 0.0);
}

TEST_CASE("cli rerun with the same seed is byte-identical") {
    auto dir1 = scratch_dir() / "rerun_a";
    auto dir2 = scratch_dir() / "rerun_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    auto cfg_path = scratch_dir() / "rerun.json";
    write(cfg_path, small_config());
    REQUIRE(run_cli("run --config " + cfg_path.string() + " --out " + dir1.string()) == 0);
    REQUIRE(run_cli("run --config " + cfg_path.string() + " --out " + dir2.string()) == 0);
    CHECK(slurp(dir1 / "requests.csv") == slurp(dir2 / "requests.csv"));
    CHECK(slurp(dir1 / "events.csv") == slurp(dir2 / "events.csv"));
}

TEST_CASE("cli rejects a missing model profile with exit 2") {
    auto cfg_path = scratch_dir() / "bad_profile.json";
    write(cfg_path, R"({"model_profile": "missing13b"})");
    CHECK(run_cli("run --config " + cfg_path.string()) == 2);
}

TEST_CASE("cli reports a stalled run with exit 3 and keeps artifacts") {
    auto dir = scratch_dir() / "stall";
    fs::remove_all(dir);
    auto cfg_path = scratch_dir() / "stall.json";
    // a request whose input can never fit the admission budget
    write(cfg_path, R"({
  "model_profile": "qwen7b",
  "workers": 1,
  "kv_capacity_tokens": 64,
  "max_sim_time_s": 5.0,
  "workload": {
    "task_set": "custom", "per_task_count": 1, "qps": 1.0, "seed": 1,
    "tasks": [{"name": "big", "ttft_s": 1.0, "tpot_s": 0.5,
               "input_len_mean": 500, "input_len_std": 0,
               "output_len_mean": 4, "output_len_std": 0}]
  }
})");
    CHECK(run_cli("run --config " + cfg_path.string() + " --out " + dir.string()) == 3);
    CHECK(fs::exists(dir / "requests.csv"));
    auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    CHECK(summary["incomplete"].get<int>() == 1);
}

TEST_CASE("cli fit recovers synthetic coefficients and flags thin samples") {
    LatencyModel truth{0.05, 2e-4, 1e-8, 0.02, 1e-5, 1e-3};
    std::vector<ProfileSample> samples;
    for (auto [batch, len] : profiling_grid()) {
        ProfileSample s;
        s.batch_size = batch;
        s.input_lengths.assign(batch, len);
        s.prefill_s = predict_prefill(truth, s.input_lengths);
        s.decode_step_s = predict_decode_step(truth, s.input_lengths);
        samples.push_back(std::move(s));
    }
    auto samples_path = scratch_dir() / "samples.csv";
    auto model_path = scratch_dir() / "model.json";
    write(samples_path, samples_to_csv(samples));
    REQUIRE(run_cli("fit --samples " + samples_path.string() + " --out " + model_path.string()) ==
            0);
    auto fitted = model_from_json(slurp(model_path));
    CHECK(fitted.b == doctest::Approx(truth.b).epsilon(1e-6));
    auto j = nlohmann::json::parse(slurp(model_path));
    CHECK(j["max_rel_residual_prefill"].get<double>() < 1e-9);

    auto thin_path = scratch_dir() / "thin.csv";
    write(thin_path, samples_to_csv({samples[0], samples[1]}));
    CHECK(run_cli("fit --samples " + thin_path.string() + " --out " + model_path.string()) == 2);
}

TEST_CASE("cli sweep emits per-cell rows plus aggregates that recompute") {
    auto dir = scratch_dir() / "sweep";
    fs::remove_all(dir);
    auto cfg_path = scratch_dir() / "sweep.json";
    write(cfg_path, small_config());
    REQUIRE(run_cli("sweep --config " + cfg_path.string() + " --out " + dir.string() +
                    " --qps 4,8 --seeds 1,2 --jobs 2") == 0);

    auto rows_text = slurp(dir / "sweep.csv");
    std::istringstream rows(rows_text);
    std::string line;
    std::getline(rows, line);
    CHECK(line == "qps,seed,policy,attainment,cost_units,p50,p95,p99");
    std::map<std::pair<std::string, std::string>, std::vector<double>> attain;
    int data_rows = 0;
    while (std::getline(rows, line)) {
        if (line.empty()) continue;
        ++data_rows;
        auto f = csv::split(line);
        attain[{f[0], f[2]}].push_back(csv::parse_double(f[3]));
    }
    CHECK(data_rows == 8);  // 2 qps x 2 seeds x 2 policies

    auto agg_text = slurp(dir / "sweep_agg.csv");
    std::istringstream agg(agg_text);
    std::getline(agg, line);  // header
    int agg_rows = 0;
    while (std::getline(agg, line)) {
        if (line.empty()) continue;
        ++agg_rows;
        auto f = csv::split(line);
        const auto& vals = attain.at({f[0], f[1]});
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= vals.size();
        double var = 0;
        for (double v : vals) var += (v - mean) * (v - mean);
        double stddev = std::sqrt(var / vals.size());
        CHECK(csv::parse_double(f[2]) == doctest::Approx(mean).epsilon(1e-12));
        CHECK(csv::parse_double(f[3]) == doctest::Approx(stddev).epsilon(1e-9));
    }
    CHECK(agg_rows == 4);  // 2 qps x 2 policies
}

TEST_CASE("cli sweep of one repeated seed has zero std") {
    auto dir = scratch_dir() / "sweep_same";
    fs::remove_all(dir);
    auto cfg_path = scratch_dir() / "sweep_same.json";
    write(cfg_path, small_config());
    REQUIRE(run_cli("sweep --config " + cfg_path.string() + " --out " + dir.string() +
                    " --qps 4 --seeds 3,3 --policies slo_aware") == 0);
    std::istringstream agg(slurp(dir / "sweep_agg.csv"));
    std::string line;
    std::getline(agg, line);
    REQUIRE(std::getline(agg, line));
    auto f = csv::split(line);
    CHECK(csv::parse_double(f[3]) == 0.0);  // attainment std
}

TEST_CASE("cli compare prints metric deltas") {
    auto a = scratch_dir() / "cmp_a.json";
    auto b = scratch_dir() / "cmp_b.json";
    write(a, R"({"attainment": 0.9, "cost_units": 100, "p50_e2e_s": 1.0})");
    write(b, R"({"attainment": 0.8, "cost_units": 120, "p50_e2e_s": 1.5})");
    CHECK(run_cli("compare " + a.string() + " " + b.string()) == 0);
}
