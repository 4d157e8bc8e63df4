#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "slosim/scaler.hpp"

using namespace slosim;

namespace {

ScalerConfig base_config() {
    ScalerConfig c;
    c.enabled = true;
    c.tau_s = 1.0;
    c.eps_out = 1.2;
    c.eps_in = 0.5;
    c.min_workers = 1;
    c.max_workers = 4;
    c.scale_in_patience = 3;
    return c;
}

PoolMetrics metrics_with(double util, double wait_ratio, double r_in, double r_process) {
    PoolMetrics m;
    m.utils = {util};
    if (wait_ratio > 0) m.wait_ratios = {wait_ratio};
    m.r_in = r_in;
    m.r_process = r_process;
    return m;
}

}  // namespace

TEST_CASE("load metric is the max of three normalized terms") {
    CHECK(load_metric({0.0, 0.0}, {}, 0.0, 0.0) == 0.0);
    CHECK(load_metric({0.9, 0.95}, {}, 5.0, 5.0) == doctest::Approx(1.0));
    CHECK(load_metric({0.1}, {0.6 / 0.5}, 0.0, 1.0) >= 1.2);
    CHECK(load_metric({}, {}, 0.0, 0.0) == 0.0);
    // zero processing rate with inflow saturates the ratio term
    CHECK(load_metric({0.1}, {}, 1.0, 0.0) > 1e6);
}

TEST_CASE("metric above the out-threshold adds one worker per tick") {
    Scaler s(base_config(), "qwen7b");
    auto actions = s.scale_tick(1.0, metrics_with(0.9, 1.5, 1.0, 1.0), 2, 2, std::nullopt,
                                std::nullopt, 0, 0);
    REQUIRE(actions.size() == 1);
    CHECK(actions[0].kind == ScaleActionKind::scale_out);
    CHECK(actions[0].provisioning_delay_s == doctest::Approx(0.89));
}

TEST_CASE("a hot rate ratio alone needs a second tick; pressure acts at once") {
    Scaler s(base_config(), "qwen7b");
    auto rate_only = metrics_with(0.2, 0.0, 3.0, 1.0);  // ratio 3, no pressure
    CHECK(s.scale_tick(1.0, rate_only, 2, 2, std::nullopt, std::nullopt, 0, 0).empty());
    CHECK(s.scale_tick(2.0, rate_only, 2, 2, std::nullopt, std::nullopt, 0, 0).size() == 1);

    Scaler s2(base_config(), "qwen7b");
    auto pressured = metrics_with(0.2, 1.5, 1.0, 1.0);  // waits already blown
    CHECK(s2.scale_tick(1.0, pressured, 2, 2, std::nullopt, std::nullopt, 0, 0).size() == 1);

    // a single hot-ratio tick followed by a calm one does not accumulate
    Scaler s3(base_config(), "qwen7b");
    auto calm = metrics_with(0.6, 0.0, 1.0, 1.0);
    CHECK(s3.scale_tick(1.0, rate_only, 2, 2, std::nullopt, std::nullopt, 0, 0).empty());
    CHECK(s3.scale_tick(2.0, calm, 2, 2, std::nullopt, std::nullopt, 0, 0).empty());
    CHECK(s3.scale_tick(3.0, rate_only, 2, 2, std::nullopt, std::nullopt, 0, 0).empty());
}

TEST_CASE("the boundary metric takes no action") {
    Scaler s(base_config(), "qwen7b");
    auto actions = s.scale_tick(1.0, metrics_with(1.2, 0.0, 0.0, 1.0), 2, 2, std::nullopt,
                                std::nullopt, 0, 0);
    CHECK(actions.empty());
}

TEST_CASE("scale-in waits for the configured patience") {
    Scaler s(base_config(), "qwen7b");
    auto quiet = metrics_with(0.3, 0.0, 0.1, 1.0);
    CHECK(s.scale_tick(1.0, quiet, 2, 2, std::nullopt, std::nullopt, 0, 0).empty());
    CHECK(s.scale_tick(2.0, quiet, 2, 2, std::nullopt, std::nullopt, 0, 0).empty());
    auto third = s.scale_tick(3.0, quiet, 2, 2, std::nullopt, std::nullopt, 0, 0);
    REQUIRE(third.size() == 1);
    CHECK(third[0].kind == ScaleActionKind::scale_in);
}

TEST_CASE("patience resets when the metric recovers") {
    Scaler s(base_config(), "qwen7b");
    auto quiet = metrics_with(0.3, 0.0, 0.1, 1.0);
    auto normal = metrics_with(0.8, 0.0, 1.0, 1.0);
    s.scale_tick(1.0, quiet, 2, 2, std::nullopt, std::nullopt, 0, 0);
    s.scale_tick(2.0, quiet, 2, 2, std::nullopt, std::nullopt, 0, 0);
    s.scale_tick(3.0, normal, 2, 2, std::nullopt, std::nullopt, 0, 0);
    CHECK(s.scale_tick(4.0, quiet, 2, 2, std::nullopt, std::nullopt, 0, 0).empty());
    CHECK(s.scale_tick(5.0, quiet, 2, 2, std::nullopt, std::nullopt, 0, 0).empty());
    CHECK(s.scale_tick(6.0, quiet, 2, 2, std::nullopt, std::nullopt, 0, 0).size() == 1);
}

TEST_CASE("worker-count bounds cap both directions") {
    Scaler s(base_config(), "qwen7b");
    auto hot = metrics_with(0.9, 2.0, 2.0, 1.0);
    CHECK(s.scale_tick(1.0, hot, 4, 0, std::nullopt, std::nullopt, 0, 0).empty());

    Scaler s2(base_config(), "qwen7b");
    auto quiet = metrics_with(0.1, 0.0, 0.0, 1.0);
    s2.scale_tick(1.0, quiet, 1, 3, std::nullopt, std::nullopt, 0, 0);
    s2.scale_tick(2.0, quiet, 1, 3, std::nullopt, std::nullopt, 0, 0);
    CHECK(s2.scale_tick(3.0, quiet, 1, 3, std::nullopt, std::nullopt, 0, 0).empty());
}

TEST_CASE("ticks are spaced by tau") {
    Scaler s(base_config(), "qwen7b");
    auto hot = metrics_with(0.9, 2.0, 2.0, 1.0);
    CHECK(s.scale_tick(1.0, hot, 2, 2, std::nullopt, std::nullopt, 0, 0).size() == 1);
    CHECK(s.scale_tick(1.5, hot, 2, 2, std::nullopt, std::nullopt, 0, 0).empty());
    CHECK(s.scale_tick(2.0, hot, 2, 2, std::nullopt, std::nullopt, 0, 0).size() == 1);
}

TEST_CASE("provisioning delays ship the measured per-model constants") {
    auto delays = default_provisioning_delays();
    CHECK(delays["fast"]["qwen32b"] == doctest::Approx(2.05));
    CHECK(delays["fast"]["llama70b"] == doctest::Approx(1.16));
    CHECK(delays["cpu_offload"]["qwen32b"] == doctest::Approx(19.41));
    CHECK(delays["disk"]["qwen7b"] == doctest::Approx(4.14));
    // fast beats disk for every model
    for (const auto& [model, fast] : delays["fast"]) CHECK(fast < delays["disk"][model]);
    CHECK(delays["disk"]["llama70b"] / delays["fast"]["llama70b"] ==
          doctest::Approx(19.4655).epsilon(1e-3));
}

TEST_CASE("fast-path faults fall back to disk delays") {
    ScalerConfig cfg = base_config();
    cfg.fast_faults = {0};
    Scaler s(cfg, "llama70b");
    auto hot = metrics_with(0.9, 2.0, 2.0, 1.0);
    auto first = s.scale_tick(1.0, hot, 1, 3, std::nullopt, std::nullopt, 0, 0);
    REQUIRE(first.size() == 1);
    CHECK(first[0].fast_path_failed);
    CHECK(first[0].provisioning_delay_s == doctest::Approx(22.58));
    auto second = s.scale_tick(2.0, hot, 2, 2, std::nullopt, std::nullopt, 0, 0);
    REQUIRE(second.size() == 1);
    CHECK(!second[0].fast_path_failed);
    CHECK(second[0].provisioning_delay_s == doctest::Approx(1.16));
}

TEST_CASE("diverging pool loads flip one worker to the hot role") {
    Scaler s(base_config(), "qwen7b");
    auto overall = metrics_with(0.8, 0.0, 1.0, 1.0);
    auto hot_prefill = metrics_with(0.9, 1.0, 2.0, 2.0);
    auto cool_decode = metrics_with(0.2, 0.0, 1.0, 4.0);
    CHECK(s.scale_tick(1.0, overall, 4, 0, hot_prefill, cool_decode, 2, 2).empty());
    auto actions = s.scale_tick(2.0, overall, 4, 0, hot_prefill, cool_decode, 2, 2);
    REQUIRE(actions.size() == 1);
    CHECK(actions[0].kind == ScaleActionKind::flip_to_prefill);
}

TEST_CASE("balanced pools never flip") {
    Scaler s(base_config(), "qwen7b");
    auto overall = metrics_with(0.8, 0.0, 1.0, 1.0);
    auto a = metrics_with(0.8, 0.0, 1.0, 1.0);
    auto b = metrics_with(0.7, 0.0, 1.0, 1.0);
    for (int t = 1; t <= 5; ++t)
        CHECK(s.scale_tick(t, overall, 4, 0, a, b, 2, 2).empty());
}

TEST_CASE("invalid threshold ordering is rejected") {
    ScalerConfig cfg = base_config();
    cfg.eps_in = 1.5;
    CHECK_THROWS_AS(Scaler(cfg, "qwen7b"), ConfigError);
}
