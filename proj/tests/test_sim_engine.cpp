#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>

#include "slosim/sim_engine.hpp"
#include "slosim/workload.hpp"

using namespace slosim;

namespace {

TaskSpec simple_task(const std::string& name = "t", double ttft = 100.0, double tpot = 10.0) {
    TaskSpec t;
    t.name = name;
    t.slo = SloSpec{ttft, tpot};
    t.input_len_mean = 10;
    t.output_len_mean = 3;
    return t;
}

RunConfig base_config(const LatencyModel& oracle) {
    RunConfig cfg;
    cfg.model_profile = "custom";
    cfg.oracle = oracle;
    cfg.estimate = oracle;
    cfg.workers = 1;
    cfg.workload.task_set = "custom";
    cfg.workload.tasks = {simple_task()};
    return cfg;
}

Request make_request(RequestId id, double arrival, int input, int output,
                     const std::string& task = "t", SloSpec slo = {100.0, 10.0}) {
    Request r;
    r.id = id;
    r.task = task;
    r.arrival_s = arrival;
    r.ts.arrival = arrival;
    r.input_len = input;
    r.output_len = output;
    r.slo = slo;
    return r;
}

std::vector<LogRecord> records_of(const SimResult& res, const std::string& name) {
    std::vector<LogRecord> out;
    for (const auto& e : res.events)
        if (e.event == name) out.push_back(e);
    return out;
}

}  // namespace

TEST_CASE("empty trace produces an empty log and zero cost") {
    auto cfg = base_config({0.1, 0, 0, 0.05, 0, 0});
    Simulation sim(cfg, {});
    auto res = sim.run();
    CHECK(res.events.empty());
    CHECK(res.report.cost_seconds == 0.0);
    CHECK(res.report.cost_units == 0);
    CHECK(!res.stalled);
}

TEST_CASE("single request follows the hand-computed timeline") {
    // prefill produces the first token at +0.1, each decode step adds 0.05
    auto cfg = base_config({0.1, 0, 0, 0.05, 0, 0});
    Simulation sim(cfg, {make_request(0, 1.0, 10, 3)});
    auto res = sim.run();
    const Request& r = res.requests[0];
    CHECK(r.ts.dispatch == doctest::Approx(1.0));
    CHECK(r.ts.first_token == doctest::Approx(1.1));
    CHECK(r.ts.completion == doctest::Approx(1.2));
    CHECK(!res.stalled);
    CHECK(res.report.attainment == doctest::Approx(1.0));
    // one worker active from 0 to completion
    CHECK(res.report.cost_seconds == doctest::Approx(1.2));
}

TEST_CASE("prefill duration follows the quadratic model") {
    auto cfg = base_config({0.01, 1e-4, 1e-8, 0.01, 0, 0});
    Simulation sim(cfg, {make_request(0, 0.0, 100, 1)});
    auto res = sim.run();
    // 0.01 + 1e-4*100 + 1e-8*10000 = 0.0201
    CHECK(res.requests[0].ts.first_token == doctest::Approx(0.0201));
    // output_len == 1 completes at the first token with zero decode steps
    CHECK(res.requests[0].ts.completion == doctest::Approx(0.0201));
}

TEST_CASE("co-arriving requests share one batched prefill step") {
    auto cfg = base_config({0.01, 1e-4, 1e-8, 0.01, 0, 0});
    Simulation sim(cfg, {make_request(0, 0.0, 100, 1), make_request(1, 0.0, 200, 1)});
    auto res = sim.run();
    // batched: 0.01 + 1e-4*300 + 1e-8*(100^2+200^2) = 0.0405
    CHECK(res.requests[0].ts.first_token == doctest::Approx(0.0405));
    CHECK(res.requests[1].ts.first_token == doctest::Approx(0.0405));
    CHECK(records_of(res, "prefill_start").size() == 2);
    CHECK(res.requests[0].ts.prefill_start == res.requests[1].ts.prefill_start);
}

TEST_CASE("decode step time tracks current lengths and batch size") {
    // one request, current_len 100 at the first decode step
    auto cfg = base_config({0.0, 0, 0, 0.02, 1e-5, 1e-3});
    Simulation sim(cfg, {make_request(0, 0.0, 100, 2)});
    auto res = sim.run();
    // prefill at 0 (a=0,b=0,c=0 -> instantaneous), one decode step of
    // 0.02 + 1e-5*100 + 1e-3 = 0.022
    CHECK(res.requests[0].ts.first_token == doctest::Approx(0.0));
    CHECK(res.requests[0].ts.completion == doctest::Approx(0.022));
}

TEST_CASE("two runs of the same trace are bit-identical") {
    auto tasks = builtin_task_set("4task");
    auto trace = generate(tasks, 40, 20.0, 9);
    RunConfig cfg;
    cfg.oracle = builtin_model_profiles().at("qwen7b");
    cfg.estimate = cfg.oracle;
    cfg.workers = 2;
    cfg.workload.tasks = tasks;
    auto res1 = Simulation(cfg, trace).run();
    auto res2 = Simulation(cfg, trace).run();
    CHECK(events_to_csv(res1.events) == events_to_csv(res2.events));
    CHECK(outcomes_to_csv(res1.outcomes) == outcomes_to_csv(res2.outcomes));
}

TEST_CASE("log invariants: ordered times, one first token and completion each") {
    auto tasks = builtin_task_set("4task");
    auto trace = generate(tasks, 50, 25.0, 4);
    RunConfig cfg;
    cfg.oracle = builtin_model_profiles().at("qwen7b");
    cfg.estimate = cfg.oracle;
    cfg.workers = 2;
    cfg.workload.tasks = tasks;
    auto res = Simulation(cfg, trace).run();
    REQUIRE(!res.stalled);

    double prev = 0.0;
    for (const auto& e : res.events) {
        CHECK(e.time_s >= prev);
        prev = e.time_s;
    }
    std::map<RequestId, int> first_tokens, completions;
    for (const auto& e : res.events) {
        if (e.event == "prefill_done") first_tokens[e.request]++;
        if (e.event == "completion") completions[e.request]++;
    }
    for (const auto& r : res.requests) {
        CHECK(first_tokens[r.id] == 1);
        CHECK(completions[r.id] == 1);
        // timestamps are monotone in lifecycle order
        CHECK(r.ts.dispatch >= r.ts.arrival);
        CHECK(r.ts.prefill_start >= r.ts.dispatch);
        CHECK(r.ts.first_token >= r.ts.prefill_start);
        CHECK(r.ts.completion >= r.ts.first_token);
    }
    // the SLO-aware decode guard saw no violations
    CHECK(res.decode_guard_violations == 0);
    CHECK(res.decode_steps_checked > 0);
}

TEST_CASE("round robin rotates across workers in arrival order") {
    auto cfg = base_config({0.001, 0, 0, 0.001, 0, 0});
    cfg.policy = DispatchPolicy::round_robin;
    cfg.workers = 2;
    std::vector<Request> trace;
    for (int i = 0; i < 4; ++i) trace.push_back(make_request(i, i * 1.0, 10, 1));
    auto res = Simulation(cfg, trace).run();
    auto dispatches = records_of(res, "dispatch");
    REQUIRE(dispatches.size() == 4);
    CHECK(dispatches[0].worker == 0);
    CHECK(dispatches[1].worker == 1);
    CHECK(dispatches[2].worker == 0);
    CHECK(dispatches[3].worker == 1);
}

TEST_CASE("round robin skips KV-full workers") {
    auto cfg = base_config({0.001, 0, 0, 1.0, 0, 0});  // slow decode keeps KV resident
    cfg.policy = DispatchPolicy::round_robin;
    cfg.workers = 2;
    cfg.kv_capacity_tokens = 1000;
    cfg.kv_admission_headroom = 0.0;
    cfg.workload.tasks[0].output_len_mean = 100;
    // w0 gets a request that fills most of its KV; the next two must both
    // land on w1 (w0 skipped), then w0 only once it frees.
    std::vector<Request> trace{make_request(0, 0.0, 800, 100), make_request(1, 0.1, 400, 2),
                               make_request(2, 0.2, 400, 2)};
    auto res = Simulation(cfg, trace).run();
    auto dispatches = records_of(res, "dispatch");
    REQUIRE(dispatches.size() == 3);
    CHECK(dispatches[0].worker == 0);
    CHECK(dispatches[1].worker == 1);
    CHECK(dispatches[2].worker == 1);
}

TEST_CASE("infeasible requests stall the run at the deadline with named ids") {
    auto cfg = base_config({0.01, 1e-4, 0, 0.01, 0, 0});
    cfg.kv_capacity_tokens = 100;
    cfg.kv_admission_headroom = 0.0;
    cfg.max_sim_time_s = 2.0;
    auto res = Simulation(cfg, {make_request(0, 0.0, 500, 2)}).run();
    CHECK(res.stalled);
    CHECK(res.stall_reason == "deadline_exceeded");
    REQUIRE(res.stuck_requests.size() == 1);
    CHECK(res.stuck_requests[0] == 0);
    // incomplete requests count as violations
    CHECK(res.report.attainment == doctest::Approx(0.0));
    CHECK(res.report.incomplete == 1);
}

TEST_CASE("kv usage returns to zero after every request completes") {
    auto tasks = builtin_task_set("2task");
    auto trace = generate(tasks, 30, 10.0, 12);
    RunConfig cfg;
    cfg.oracle = builtin_model_profiles().at("qwen7b");
    cfg.estimate = cfg.oracle;
    cfg.workers = 2;
    cfg.workload.tasks = tasks;
    auto res = Simulation(cfg, trace).run();
    REQUIRE(!res.stalled);
    // cost equals workers x sim duration when no scaling happens
    CHECK(res.report.cost_seconds == doctest::Approx(2 * res.sim_end_s));
}

TEST_CASE("priority mode assigns SLOs within the per-priority bounds") {
    RunConfig cfg;
    cfg.oracle = builtin_model_profiles().at("qwen7b");
    cfg.estimate = cfg.oracle;
    cfg.workers = 2;
    cfg.workload.priority_mode = true;
    cfg.workload.tasks = builtin_task_set("4task", true);
    cfg.priority.bounds = default_priority_bounds("4task");
    cfg.priority.levels = 4;
    auto trace = generate(cfg.workload.tasks, 40, 20.0, 21);
    auto res = Simulation(cfg, trace).run();
    REQUIRE(!res.stalled);
    for (const auto& r : res.requests) {
        REQUIRE(r.priority.has_value());
        const auto& b = cfg.priority.bounds[*r.priority];
        CHECK(r.slo.ttft_s >= b.min_ttft);
        CHECK(r.slo.ttft_s <= b.max_ttft);
        CHECK(r.slo.tpot_s >= b.min_tpot);
        CHECK(r.slo.tpot_s <= b.max_tpot);
    }
}

TEST_CASE("scheduler overhead delays the prefill step") {
    auto cfg = base_config({0.1, 0, 0, 0.05, 0, 0});
    cfg.scheduler_overhead_s = 0.02;
    Simulation sim(cfg, {make_request(0, 0.0, 10, 1)});
    auto res = sim.run();
    CHECK(res.requests[0].ts.first_token == doctest::Approx(0.12));
}
