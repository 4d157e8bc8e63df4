#pragma once

#include <map>
#include <string>
#include <vector>

#include "slosim/types.hpp"

namespace slosim {

struct WorkerSpan {
    WorkerId worker = -1;
    double start_s = 0.0;
    double end_s = 0.0;
};

// Measured latencies for one finished (or abandoned) request.
struct RequestOutcome {
    RequestId id = -1;
    std::string task;
    double arrival_s = 0.0;
    double first_token_s = kUnsetTime;
    double completion_s = kUnsetTime;
    double ttft_s = kUnsetTime;
    double tpot_s = kUnsetTime;
    bool completed = false;
    bool ttft_met = false;
    bool tpot_met = false;
    SloSpec slo;
    std::optional<int> priority;
};

RequestOutcome measure(const Request& r);

struct TaskBreakdown {
    int count = 0;
    double attainment = 0.0;
    double p50_e2e_s = 0.0;
    double p95_e2e_s = 0.0;
    double p99_e2e_s = 0.0;
};

struct RunReport {
    double attainment = 0.0;
    long long cost_units = 0;   // per-worker active seconds / 50 ms, rounded up
    double cost_seconds = 0.0;
    double p50_e2e_s = 0.0;
    double p95_e2e_s = 0.0;
    double p99_e2e_s = 0.0;
    int completed = 0;
    int incomplete = 0;
    int violations_ttft_only = 0;
    int violations_tpot_only = 0;
    int violations_both = 0;
    std::map<std::string, TaskBreakdown> per_task;
};

// Fraction of requests meeting both targets. Requests left incomplete at the
// simulation deadline count as violations.
double attainment(const std::vector<RequestOutcome>& outcomes);

double cost_seconds(const std::vector<WorkerSpan>& spans, double unit_cost = 1.0);
long long cost_units(const std::vector<WorkerSpan>& spans);

double e2e_latency(const RequestOutcome& r);

// Nearest-rank percentile: the ceil(q*n)-th smallest value.
double percentile(std::vector<double> values, double q);

RunReport build_report(const std::vector<RequestOutcome>& outcomes,
                       const std::vector<WorkerSpan>& spans);

std::string report_to_json(const RunReport& report);

// Per-request results CSV, header:
//   id,task,arrival_s,first_token_s,completion_s,ttft_s,tpot_s,ttft_met,tpot_met
// Unset timestamps render as empty fields.
std::string outcomes_to_csv(const std::vector<RequestOutcome>& outcomes);
std::vector<RequestOutcome> outcomes_from_csv(const std::string& text);

}  // namespace slosim
