#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slosim/types.hpp"

namespace slosim {

// Overall load, the max of three normalized signals: mean KV utilization,
// the worst queue wait relative to its TTFT, and the arrival/processing rate
// ratio. Values above 1 mean the system is behind.
double load_metric(const std::vector<double>& utils, const std::vector<double>& wait_ratios,
                   double r_in, double r_process);

// Resource pressure only (utilization and waits). The rate ratio sits near 1
// whenever the system keeps up, at any utilization, so scale-in decisions
// would starve on it; they gate on this signal instead.
double pressure_metric(const std::vector<double>& utils, const std::vector<double>& wait_ratios);

struct ScalerConfig {
    bool enabled = false;
    double tau_s = 1.0;
    double eps_out = 1.2;
    double eps_in = 0.5;
    int min_workers = 1;
    int max_workers = 4;
    int scale_in_patience = 3;
    std::string provisioning_mode = "fast";
    // mode -> model profile -> seconds to ready
    std::map<std::string, std::map<std::string, double>> provisioning_delays;
    std::optional<double> provisioning_delay_override_s;
    // ordinals (0-based) of scale-out actions whose fast-path transfer fails
    // and falls back to disk loading
    std::vector<int> fast_faults;
    // role flip: per-role load metrics diverging by this factor for
    // `flip_patience` consecutive ticks moves one worker to the hot role
    double flip_divergence = 2.0;
    int flip_patience = 2;
};

std::map<std::string, std::map<std::string, double>> default_provisioning_delays();

enum class ScaleActionKind { scale_out, scale_in, flip_to_prefill, flip_to_decode };

struct ScaleAction {
    ScaleActionKind kind;
    double provisioning_delay_s = 0.0;  // scale_out only
    bool fast_path_failed = false;
};

struct PoolMetrics {
    std::vector<double> utils;
    std::vector<double> wait_ratios;
    double r_in = 0.0;
    double r_process = 0.0;
};

// Threshold controller evaluated every tau seconds. At most one action per
// tick; scale-in requires the metric to stay under eps_in for
// scale_in_patience consecutive ticks.
class Scaler {
public:
    Scaler(ScalerConfig config, std::string model_profile);

    std::vector<ScaleAction> scale_tick(double now, const PoolMetrics& overall,
                                        int running_workers, int warm_workers,
                                        const std::optional<PoolMetrics>& prefill_pool,
                                        const std::optional<PoolMetrics>& decode_pool,
                                        int prefill_count, int decode_count);

    double provisioning_delay(bool fast_failed) const;
    const ScalerConfig& config() const { return config_; }

private:
    ScalerConfig config_;
    std::string model_profile_;
    double last_decision_ = -1e18;
    int low_ticks_ = 0;
    int rate_hot_ticks_ = 0;
    int prefill_hot_ticks_ = 0;
    int decode_hot_ticks_ = 0;
    int scale_out_ordinal_ = 0;
};

}  // namespace slosim
