#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "slosim/config.hpp"
#include "slosim/dispatcher.hpp"
#include "slosim/metrics.hpp"
#include "slosim/priority_mapper.hpp"
#include "slosim/scaler.hpp"
#include "slosim/types.hpp"

namespace slosim {

enum class SimEventKind {
    arrival,
    dispatch_wake,
    prefill_done,
    decode_step_done,
    migration_done,
    monitor_tick,
    scale_tick,
    worker_ready,
};

struct SimEvent {
    double time = 0.0;
    std::uint64_t seq = 0;  // tie-breaker: FIFO within a timestamp
    SimEventKind kind = SimEventKind::arrival;
    RequestId request = -1;
    WorkerId worker = -1;
};

struct WorkerState {
    WorkerId id = -1;
    WorkerRole role = WorkerRole::collocated;
    WorkerStatus status = WorkerStatus::warm;

    std::vector<RequestId> wait_batch;  // dispatched, awaiting prefill
    std::vector<RequestId> run_batch;   // decoding
    std::vector<RequestId> retained;    // prefilled, KV held until migration (src side)
    struct Inbound {
        RequestId id;
        int tokens;
        double tpot_s;
        long long reserve_rem;
    };
    std::vector<Inbound> inbound;  // migrations in flight toward this worker

    long long kv_capacity = 0;
    long long kv_used = 0;

    bool step_in_flight = false;
    bool step_is_prefill = false;
    std::vector<RequestId> step_batch;
    double busy_until = 0.0;

    double active_since = kUnsetTime;
    std::vector<WorkerSpan> spans;

    bool drain_requested = false;
    std::optional<WorkerRole> pending_role;

    int load_size() const {
        return static_cast<int>(wait_batch.size() + run_batch.size() + retained.size() +
                                step_batch.size() + inbound.size());
    }
};

struct LogRecord {
    double time_s = 0.0;
    std::string event;
    RequestId request = -1;  // -1 renders as an empty field
    WorkerId worker = -1;
    std::string detail;
};

struct SimResult {
    std::vector<Request> requests;
    std::vector<RequestOutcome> outcomes;
    std::vector<LogRecord> events;
    std::vector<WorkerSpan> worker_spans;
    RunReport report;

    bool stalled = false;
    std::string stall_reason;
    std::vector<RequestId> stuck_requests;
    double sim_end_s = 0.0;

    // instrumentation
    long long decode_steps_checked = 0;
    long long decode_guard_violations = 0;  // oracle step above the batch's min TPOT
    long long migrations = 0;
    int scale_outs = 0;
    int scale_ins = 0;
    int role_flips = 0;
};

// Deterministic discrete-event run over analytically modeled workers.
// Identical (config, trace) pairs produce identical results bit for bit.
class Simulation {
public:
    Simulation(RunConfig config, std::vector<Request> trace);
    SimResult run();

private:
    struct MigKey {
        double tpot;
        double first_token;
        RequestId id;
        bool operator<(const MigKey& o) const {
            if (tpot != o.tpot) return tpot < o.tpot;
            if (first_token != o.first_token) return first_token < o.first_token;
            return id < o.id;
        }
    };

    void push_event(double time, SimEventKind kind, RequestId request = -1, WorkerId worker = -1);
    void schedule_wake(double time);
    void log(double time, const std::string& event, RequestId request = -1, WorkerId worker = -1,
             const std::string& detail = "");

    void on_arrival(const SimEvent& ev);
    void on_dispatch_wake(const SimEvent& ev);
    void on_prefill_done(const SimEvent& ev);
    void on_decode_step_done(const SimEvent& ev);
    void on_migration_done(const SimEvent& ev);
    void on_monitor_tick(const SimEvent& ev);
    void on_scale_tick(const SimEvent& ev);
    void on_worker_ready(const SimEvent& ev);

    void run_dispatch_rounds(double now);
    void try_rr_dispatch(double now);
    void try_migrations(double now);
    void maybe_start_step(WorkerId w, double now);
    void start_prefill_step(WorkerState& w, double now);
    void start_decode_step(WorkerState& w, double now);
    void complete_request(RequestId id, WorkerState& w, double now);
    void check_drain_done(WorkerState& w, double now);
    void finalize_stop(WorkerState& w, double now);
    void apply_role_flip(WorkerState& w, double now);

    WorkerShadow shadow_truth(const WorkerState& w) const;
    long long rr_headroom(const WorkerState& w) const;
    long long effective_capacity() const;
    long long output_reserve(const Request& r) const;
    int task_index(const std::string& name) const;
    SloSpec assign_priority_slo(const Request& r);
    std::vector<WorkerId> pool_workers(WorkerRole role, bool admissible) const;
    PoolMetrics overall_metrics(double now) const;
    PoolMetrics pool_metrics(WorkerRole role, double now) const;
    void apply_scale_action(const ScaleAction& action, double now);
    void open_span(WorkerState& w, double now);
    void close_span(WorkerState& w, double now);
    int running_count() const;
    int warm_count() const;
    bool all_done() const { return completed_ == static_cast<long long>(requests_.size()); }
    std::vector<RequestId> pending_requests() const;

    RunConfig cfg_;
    std::vector<Request> requests_;
    std::vector<WorkerState> workers_;
    std::map<std::string, int> task_idx_;

    struct EventCompare {
        bool operator()(const SimEvent& a, const SimEvent& b) const {
            if (a.time != b.time) return a.time > b.time;
            return a.seq > b.seq;
        }
    };
    std::priority_queue<SimEvent, std::vector<SimEvent>, EventCompare> queue_;
    std::uint64_t next_seq_ = 0;
    double next_wake_ = std::numeric_limits<double>::infinity();

    Dispatcher dispatcher_;
    OutputEstimator estimator_;
    RoundRobinCursor rr_cursor_;
    RoundRobinCursor rr_decode_cursor_;
    std::vector<RequestId> rr_pending_;

    std::set<MigKey> migration_queue_;
    std::map<RequestId, std::pair<WorkerId, WorkerId>> migrating_;  // id -> (src, dst)
    std::set<RequestId> starvation_logged_;

    std::optional<SloWindow> mapper_;
    std::optional<Scaler> scaler_;
    std::optional<PoolMetrics> last_prefill_metrics_;
    std::optional<PoolMetrics> last_decode_metrics_;

    // request-level event times for windowed rate estimates
    std::deque<double> arrival_times_;
    std::deque<double> completion_times_;
    std::deque<double> prefill_times_;
    double rate_window_s() const { return 5.0 * cfg_.scaler.tau_s; }
    double windowed_rate(const std::deque<double>& times, double now) const;

    long long completed_ = 0;
    double last_completion_ = 0.0;
    double now_ = 0.0;

    SimResult result_;
};

std::string events_to_csv(const std::vector<LogRecord>& events);

// Convenience: build the trace from the config's workload section and run.
SimResult run_simulation(const RunConfig& cfg);

}  // namespace slosim
