#include "slosim/scaler.hpp"

#include <algorithm>
#include <numeric>

namespace slosim {

double load_metric(const std::vector<double>& utils, const std::vector<double>& wait_ratios,
                   double r_in, double r_process) {
    constexpr double kRateEps = 1e-9;
    double rate_ratio = r_in / std::max(r_process, kRateEps);
    return std::max(pressure_metric(utils, wait_ratios), rate_ratio);
}

double pressure_metric(const std::vector<double>& utils, const std::vector<double>& wait_ratios) {
    double mean_util = 0.0;
    if (!utils.empty())
        mean_util = std::accumulate(utils.begin(), utils.end(), 0.0) / utils.size();
    double worst_wait = 0.0;
    for (double w : wait_ratios) worst_wait = std::max(worst_wait, w);
    return std::max(mean_util, worst_wait);
}

std::map<std::string, std::map<std::string, double>> default_provisioning_delays() {
    return {
        {"fast", {{"qwen7b", 0.89}, {"qwen32b", 2.05}, {"llama70b", 1.16}}},
        {"cpu_offload", {{"qwen7b", 2.73}, {"qwen32b", 19.41}, {"llama70b", 11.50}}},
        {"disk", {{"qwen7b", 4.14}, {"qwen32b", 28.84}, {"llama70b", 22.58}}},
    };
}

Scaler::Scaler(ScalerConfig config, std::string model_profile)
    : config_(std::move(config)), model_profile_(std::move(model_profile)) {
    if (config_.provisioning_delays.empty())
        config_.provisioning_delays = default_provisioning_delays();
    if (!(config_.eps_in < config_.eps_out))
        throw ConfigError("scaler: eps_in must be < eps_out");
    if (config_.min_workers > config_.max_workers)
        throw ConfigError("scaler: min_workers must be <= max_workers");
    if (config_.tau_s <= 0.0) throw ConfigError("scaler: tau_s must be > 0");
}

double Scaler::provisioning_delay(bool fast_failed) const {
    if (config_.provisioning_delay_override_s) return *config_.provisioning_delay_override_s;
    const std::string mode = fast_failed ? "disk" : config_.provisioning_mode;
    auto mode_it = config_.provisioning_delays.find(mode);
    if (mode_it == config_.provisioning_delays.end())
        throw ConfigError("scaler: unknown provisioning mode: " + mode);
    auto it = mode_it->second.find(model_profile_);
    if (it == mode_it->second.end())
        throw ConfigError("scaler: no provisioning delay for model profile '" + model_profile_ +
                          "' in mode '" + mode + "'");
    return it->second;
}

std::vector<ScaleAction> Scaler::scale_tick(double now, const PoolMetrics& overall,
                                            int running_workers, int warm_workers,
                                            const std::optional<PoolMetrics>& prefill_pool,
                                            const std::optional<PoolMetrics>& decode_pool,
                                            int prefill_count, int decode_count) {
    if (now - last_decision_ < config_.tau_s) return {};
    last_decision_ = now;

    double metric = load_metric(overall.utils, overall.wait_ratios, overall.r_in,
                                overall.r_process);
    double pressure = pressure_metric(overall.utils, overall.wait_ratios);

    if (metric > config_.eps_out) {
        low_ticks_ = 0;
        // Utilization and wait pressure act immediately; a hot arrival/
        // processing ratio alone is noisy at low volume and must persist for
        // a second tick.
        bool confirmed = pressure > config_.eps_out || ++rate_hot_ticks_ >= 2;
        if (confirmed && running_workers < config_.max_workers && warm_workers > 0) {
            rate_hot_ticks_ = 0;
            bool fail = std::find(config_.fast_faults.begin(), config_.fast_faults.end(),
                                  scale_out_ordinal_) != config_.fast_faults.end();
            bool fast_failed = fail && config_.provisioning_mode == "fast";
            ++scale_out_ordinal_;
            return {ScaleAction{ScaleActionKind::scale_out, provisioning_delay(fast_failed),
                                fast_failed}};
        }
        return {};
    }
    rate_hot_ticks_ = 0;

    if (pressure < config_.eps_in) {
        ++low_ticks_;
        if (low_ticks_ >= config_.scale_in_patience && running_workers > config_.min_workers) {
            low_ticks_ = 0;
            return {ScaleAction{ScaleActionKind::scale_in}};
        }
        // fall through: a quiet system may still need a role rebalance
    } else {
        low_ticks_ = 0;
    }

    if (prefill_pool && decode_pool) {
        double mp = load_metric(prefill_pool->utils, prefill_pool->wait_ratios, prefill_pool->r_in,
                                prefill_pool->r_process);
        double md = load_metric(decode_pool->utils, decode_pool->wait_ratios, decode_pool->r_in,
                                decode_pool->r_process);
        if (mp >= config_.flip_divergence * md && md >= 0.0) {
            ++prefill_hot_ticks_;
            decode_hot_ticks_ = 0;
        } else if (md >= config_.flip_divergence * mp) {
            ++decode_hot_ticks_;
            prefill_hot_ticks_ = 0;
        } else {
            prefill_hot_ticks_ = decode_hot_ticks_ = 0;
        }
        if (prefill_hot_ticks_ >= config_.flip_patience && decode_count > 1) {
            prefill_hot_ticks_ = 0;
            return {ScaleAction{ScaleActionKind::flip_to_prefill}};
        }
        if (decode_hot_ticks_ >= config_.flip_patience && prefill_count > 1) {
            decode_hot_ticks_ = 0;
            return {ScaleAction{ScaleActionKind::flip_to_decode}};
        }
    }
    return {};
}

}  // namespace slosim
