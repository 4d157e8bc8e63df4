#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slosim/dispatcher.hpp"
#include "slosim/latency_model.hpp"
#include "slosim/priority_mapper.hpp"
#include "slosim/scaler.hpp"
#include "slosim/types.hpp"

namespace slosim {

struct KvLinkModel {
    double base_latency_s = 0.005;
    double per_token_s = 1e-6;
};

struct WorkloadConfig {
    std::string task_set = "4task";  // builtin name, or "custom" with tasks[]
    bool priority_mode = false;
    std::vector<TaskSpec> tasks;     // resolved task list
    int per_task_count = 300;
    double qps = 8.0;
    std::uint64_t seed = 42;
};

struct PriorityConfig {
    int levels = 4;
    int window_size = 50;
    std::vector<PriorityBounds> bounds;  // resolved; defaults derive from the task set
};

struct RunConfig {
    std::string model_profile = "qwen7b";
    std::string scheduler_model_profile;  // empty: scheduler shares the oracle
    LatencyModel oracle;
    LatencyModel estimate;

    ExecMode mode = ExecMode::collocated;
    DispatchPolicy policy = DispatchPolicy::slo_aware;
    DispatcherConfig dispatcher;

    int workers = 2;           // collocated pool size
    int prefill_workers = 2;   // disaggregated split
    int decode_workers = 2;

    long long kv_capacity_tokens = 16384;
    // Fraction of capacity withheld from admission accounting so that
    // output-length underestimates cannot overflow real KV.
    double kv_admission_headroom = 0.1;
    KvLinkModel kv_link;
    double scheduler_overhead_s = 0.0;

    ScalerConfig scaler;
    WorkloadConfig workload;
    PriorityConfig priority;

    double max_sim_time_s = 3600.0;
    std::string output_dir = "out";
    bool log_decode_steps = false;
};

// Synthetic default coefficient sets per model scale. Real deployments
// replace these with coefficients fitted from profiler samples.
const std::map<std::string, LatencyModel>& builtin_model_profiles();

// Parses and validates a config. Unknown keys are rejected with the JSON
// line they appear on; so are structural errors.
RunConfig config_from_json(const std::string& text);
RunConfig config_from_file(const std::string& path);
std::string config_to_json(const RunConfig& cfg);

}  // namespace slosim
