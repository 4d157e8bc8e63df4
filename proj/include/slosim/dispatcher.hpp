#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "slosim/latency_model.hpp"
#include "slosim/types.hpp"

namespace slosim {

// Token budget for one worker: the largest prefill volume that still leaves
// every resident and incoming request able to meet the tightest (TTFT, TPOT)
// pair, given the current decode-step estimate e_d. Returns 0 when decoding
// is already at the TPOT limit; returns max_budget when b == 0 (the model
// says prefill is free per token).
long long compute_ntoken(double ttft_s, double tpot_s, double e_d_s, double coeff_a,
                         double coeff_b, long long max_budget);

// Probability that a request dispatched now still meets its TTFT, discounted
// by worker KV utilization. Zero once the deadline cannot be met at all.
double calculate_p(double arrival_s, double ttft_s, double now_s, double expected_prefill_s,
                   double kv_utilization, double util_weight);

// Next maturity time after dispatching: one prefill step plus the decode
// iterations that prefill cost amortizes against the batch's TPOT headroom.
// With no headroom (relax <= 0) the worker matures right after the prefill.
double maturity_after_dispatch(double now_s, double e_p_s, double e_d_s, double min_tpot_s);

struct DispatcherConfig {
    double theta = 0.5;             // admission probability threshold
    double util_weight = 0.5;       // lambda in the utilization discount
    double sync_interval_s = 0.05;  // shadow-state refresh period
    double poll_interval_s = 0.01;  // idle-worker re-poll spacing
    long long max_token_budget = 1 << 20;
    bool serve_overdue = true;      // admit deadline-missed requests with leftover budget
};

// Per-task exponential moving average of observed output lengths; the
// scheduler's stand-in for ground-truth output_len when reserving KV.
class OutputEstimator {
public:
    OutputEstimator(std::vector<double> initial_means, double alpha = 0.1)
        : ema_(std::move(initial_means)), alpha_(alpha) {}
    void observe(int task_idx, int output_len) {
        ema_[task_idx] = (1.0 - alpha_) * ema_[task_idx] + alpha_ * output_len;
    }
    long long reserve_tokens(int task_idx) const {
        return static_cast<long long>(std::ceil(ema_[task_idx]));
    }

private:
    std::vector<double> ema_;
    double alpha_;
};

struct QueuedRequest {
    RequestId id = -1;
    double tpot_s = 0.0;
    double ttft_s = 0.0;
    double arrival_s = 0.0;
    int input_len = 0;
    int task_idx = 0;
    std::optional<int> priority;
};

struct ShadowRequest {
    RequestId id = -1;
    int tokens = 0;  // input_len while waiting, current_len while decoding
    double tpot_s = 0.0;
    long long reserve_rem = 0;  // output tokens still reserved for this request
};

// The dispatcher's local copy of one worker's state, refreshed from ground
// truth every sync interval and updated optimistically at each dispatch.
struct WorkerShadow {
    WorkerId id = -1;
    WorkerRole role = WorkerRole::collocated;
    double maturity = 0.0;
    long long kv_capacity = 0;
    long long kv_effective = 0;  // capacity minus the admission headroom
    long long kv_used = 0;       // tokens actually resident
    std::vector<ShadowRequest> wait;
    std::vector<ShadowRequest> run;

    long long free_tokens() const {
        long long pending = 0, reserved = 0;
        for (const auto& r : wait) {
            pending += r.tokens;
            reserved += r.reserve_rem;
        }
        for (const auto& r : run) reserved += r.reserve_rem;
        return kv_effective - kv_used - pending - reserved;
    }
    double utilization() const {
        return kv_capacity > 0 ? static_cast<double>(kv_used) / kv_capacity : 0.0;
    }
};

struct DispatchDecision {
    WorkerId worker = -1;
    std::vector<RequestId> admitted;
    long long token_limit = 0;
    double new_maturity = 0.0;
};

// SLO-aware dispatcher: a request queue ordered by (TPOT, arrival, id), a
// worker queue ordered by maturity time, token-budget admission and the
// feasibility-probability gate. Drives the prefill stage in disaggregated
// mode and the whole worker pool in collocated mode.
class Dispatcher {
public:
    Dispatcher(DispatcherConfig config, const LatencyModel* estimate_model);

    void enqueue(const QueuedRequest& r);
    bool queue_empty() const { return queue_.empty(); }
    std::size_t queue_size() const { return queue_.size(); }

    // True when the queue holds a request with a numerically lower priority
    // value than `priority` (used by the priority->SLO contention rule).
    bool higher_priority_pending(int priority) const;

    // Queue wait ratios (now - arrival) / TTFT, one per pending request.
    std::vector<double> wait_ratios(double now) const;

    void add_worker(const WorkerShadow& shadow);
    void remove_worker(WorkerId id);
    bool has_worker(WorkerId id) const { return shadows_.count(id) > 0; }
    void sync_worker(const WorkerShadow& truth);
    const WorkerShadow& shadow(WorkerId id) const { return shadows_.at(id); }
    std::optional<double> min_maturity() const;

    // One Algorithm-1 round: pop the earliest-maturity worker, compute its
    // token budget, scan the queue admitting feasible requests first-fit,
    // update maturity and reinsert. Returns nullopt when no worker is
    // registered.
    std::optional<DispatchDecision> dispatch_round(double now, const OutputEstimator& est);

private:
    long long token_budget(const WorkerShadow& shadow) const;
    double expected_prefill_single(int input_len) const;

    DispatcherConfig config_;
    const LatencyModel* model_;
    // (tpot, arrival, id) -> request; pop order respects the key
    std::map<std::tuple<double, double, RequestId>, QueuedRequest> queue_;
    std::set<std::pair<double, WorkerId>> worker_queue_;
    std::map<WorkerId, WorkerShadow> shadows_;
};

// Round-robin baseline: strict rotation over eligible workers, ignoring SLOs
// and budgets, subject only to KV capacity. `headroom_ok` is supplied by the
// engine against true worker state.
class RoundRobinCursor {
public:
    // Returns the first worker in rotation order accepted by the predicate,
    // advancing the cursor past it; nullopt when none qualifies.
    template <typename Pred>
    std::optional<WorkerId> next(const std::vector<WorkerId>& pool, Pred&& headroom_ok) {
        if (pool.empty()) return std::nullopt;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            WorkerId w = pool[(cursor_ + i) % pool.size()];
            if (headroom_ok(w)) {
                cursor_ = (cursor_ + i + 1) % pool.size();
                return w;
            }
        }
        return std::nullopt;
    }

private:
    std::size_t cursor_ = 0;
};

}  // namespace slosim
