#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace slosim {

using RequestId = std::int64_t;
using WorkerId = int;

constexpr double kUnsetTime = std::numeric_limits<double>::quiet_NaN();

inline bool time_is_set(double t) { return t == t; }

// Latency targets a request must meet.
struct SloSpec {
    double ttft_s = 0.0;
    double tpot_s = 0.0;
};

// One workload class: either an absolute SLO pair or a priority level,
// plus the token-length statistics its requests are drawn from.
struct TaskSpec {
    std::string name;
    std::optional<SloSpec> slo;
    std::optional<int> priority;
    double input_len_mean = 0.0;
    double input_len_std = 0.0;
    double output_len_mean = 0.0;
    double output_len_std = 0.0;

    // Stream shaping: offset of the task's Poisson process and an optional
    // per-task rate override (0 = share the aggregate rate equally).
    double start_s = 0.0;
    double qps = 0.0;
};

struct RequestTimestamps {
    double arrival = kUnsetTime;
    double dispatch = kUnsetTime;
    double prefill_start = kUnsetTime;
    double first_token = kUnsetTime;
    double migration_start = kUnsetTime;
    double migration_end = kUnsetTime;
    double completion = kUnsetTime;
};

// One inference job. output_len is simulator ground truth; schedulers must
// not read it (they work from per-task output estimates instead).
struct Request {
    RequestId id = -1;
    std::string task;
    double arrival_s = 0.0;
    int input_len = 0;
    int output_len = 0;
    SloSpec slo;
    std::optional<int> priority;
    RequestTimestamps ts;

    // Runtime state owned by the engine.
    int generated = 0;           // tokens produced so far (prefill yields the first)
    int current_len = 0;         // prefill + decoded tokens resident in KV
};

enum class WorkerRole { collocated, prefill, decode };
enum class WorkerStatus { warm, loading, running, draining, stopped };
enum class ExecMode { collocated, pd_disaggregated };
enum class DispatchPolicy { slo_aware, round_robin };

inline const char* to_string(WorkerRole r) {
    switch (r) {
        case WorkerRole::collocated: return "collocated";
        case WorkerRole::prefill: return "prefill";
        case WorkerRole::decode: return "decode";
    }
    return "?";
}

inline const char* to_string(WorkerStatus s) {
    switch (s) {
        case WorkerStatus::warm: return "warm";
        case WorkerStatus::loading: return "loading";
        case WorkerStatus::running: return "running";
        case WorkerStatus::draining: return "draining";
        case WorkerStatus::stopped: return "stopped";
    }
    return "?";
}

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class StallError : public std::runtime_error {
public:
    StallError(const std::string& msg, std::vector<RequestId> stuck)
        : std::runtime_error(msg), stuck_requests(std::move(stuck)) {}
    std::vector<RequestId> stuck_requests;
};

}  // namespace slosim
