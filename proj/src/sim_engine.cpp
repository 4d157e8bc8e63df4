#include "slosim/sim_engine.hpp"

#include <algorithm>
#include <cmath>

#include "slosim/csv.hpp"
#include "slosim/workload.hpp"

namespace slosim {

namespace {

const char* kind_name(SimEventKind k) {
    switch (k) {
        case SimEventKind::arrival: return "arrival";
        case SimEventKind::dispatch_wake: return "dispatch_wake";
        case SimEventKind::prefill_done: return "prefill_done";
        case SimEventKind::decode_step_done: return "decode_step_done";
        case SimEventKind::migration_done: return "migration_done";
        case SimEventKind::monitor_tick: return "monitor_tick";
        case SimEventKind::scale_tick: return "scale_tick";
        case SimEventKind::worker_ready: return "worker_ready";
    }
    return "?";
}

}  // namespace

Simulation::Simulation(RunConfig config, std::vector<Request> trace)
    : cfg_(std::move(config)),
      requests_(std::move(trace)),
      dispatcher_(cfg_.dispatcher, &cfg_.estimate),
      estimator_([&] {
          std::vector<double> means;
          for (const auto& t : cfg_.workload.tasks) means.push_back(t.output_len_mean);
          return means;
      }()) {
    for (size_t i = 0; i < cfg_.workload.tasks.size(); ++i)
        task_idx_[cfg_.workload.tasks[i].name] = static_cast<int>(i);
    for (size_t i = 0; i < requests_.size(); ++i) {
        if (requests_[i].id != static_cast<RequestId>(i))
            throw std::invalid_argument("trace ids must be 0..n-1 in order");
        if (!task_idx_.count(requests_[i].task))
            throw std::invalid_argument("trace request references unknown task: " +
                                        requests_[i].task);
    }

    int initial = cfg_.mode == ExecMode::collocated ? cfg_.workers
                                                    : cfg_.prefill_workers + cfg_.decode_workers;
    int total = cfg_.scaler.enabled ? std::max(cfg_.scaler.max_workers, initial) : initial;
    workers_.resize(total);
    for (int i = 0; i < total; ++i) {
        WorkerState& w = workers_[i];
        w.id = i;
        w.kv_capacity = cfg_.kv_capacity_tokens;
        if (i < initial) {
            w.status = WorkerStatus::running;
            if (cfg_.mode == ExecMode::collocated)
                w.role = WorkerRole::collocated;
            else
                w.role = i < cfg_.prefill_workers ? WorkerRole::prefill : WorkerRole::decode;
        } else {
            w.status = WorkerStatus::warm;
            w.role = cfg_.mode == ExecMode::collocated ? WorkerRole::collocated
                                                       : WorkerRole::decode;
        }
    }

    if (cfg_.workload.priority_mode)
        mapper_.emplace(cfg_.priority.levels, cfg_.priority.window_size, cfg_.priority.bounds);
    if (cfg_.scaler.enabled) scaler_.emplace(cfg_.scaler, cfg_.model_profile);
}

long long Simulation::effective_capacity() const {
    return static_cast<long long>(
        std::floor(cfg_.kv_capacity_tokens * (1.0 - cfg_.kv_admission_headroom)));
}

int Simulation::task_index(const std::string& name) const { return task_idx_.at(name); }

double Simulation::windowed_rate(const std::deque<double>& times, double now) const {
    double window = std::min(rate_window_s(), std::max(now, cfg_.scaler.tau_s));
    double cutoff = now - window;
    long long n = 0;
    for (auto it = times.rbegin(); it != times.rend() && *it > cutoff; ++it) ++n;
    return n / window;
}

long long Simulation::output_reserve(const Request& r) const {
    long long rem = estimator_.reserve_tokens(task_index(r.task)) - r.generated;
    return std::max(0LL, rem);
}

void Simulation::push_event(double time, SimEventKind kind, RequestId request, WorkerId worker) {
    queue_.push(SimEvent{time, next_seq_++, kind, request, worker});
}

void Simulation::schedule_wake(double time) {
    if (time < next_wake_) {
        next_wake_ = time;
        push_event(time, SimEventKind::dispatch_wake);
    }
}

void Simulation::log(double time, const std::string& event, RequestId request, WorkerId worker,
                     const std::string& detail) {
    result_.events.push_back(LogRecord{time, event, request, worker, detail});
}

void Simulation::open_span(WorkerState& w, double now) {
    w.active_since = now;
    log(now, "worker_active", -1, w.id, to_string(w.role));
}

void Simulation::close_span(WorkerState& w, double now) {
    if (!time_is_set(w.active_since)) return;
    w.spans.push_back(WorkerSpan{w.id, w.active_since, now});
    w.active_since = kUnsetTime;
}

int Simulation::running_count() const {
    int n = 0;
    for (const auto& w : workers_)
        if (w.status == WorkerStatus::running || w.status == WorkerStatus::loading) ++n;
    return n;
}

int Simulation::warm_count() const {
    int n = 0;
    for (const auto& w : workers_)
        if (w.status == WorkerStatus::warm) ++n;
    return n;
}

std::vector<RequestId> Simulation::pending_requests() const {
    std::vector<RequestId> out;
    for (const auto& r : requests_)
        if (!time_is_set(r.ts.completion)) out.push_back(r.id);
    return out;
}

std::vector<WorkerId> Simulation::pool_workers(WorkerRole role, bool admissible) const {
    std::vector<WorkerId> out;
    for (const auto& w : workers_) {
        if (w.status != WorkerStatus::running) continue;
        if (w.role != role) continue;
        if (admissible && (w.drain_requested || w.pending_role)) continue;
        out.push_back(w.id);
    }
    return out;
}

WorkerShadow Simulation::shadow_truth(const WorkerState& w) const {
    WorkerShadow s;
    s.id = w.id;
    s.role = w.role;
    s.kv_capacity = w.kv_capacity;
    s.kv_effective = effective_capacity();
    s.kv_used = w.kv_used;
    auto add_wait = [&](RequestId id) {
        const Request& r = requests_[id];
        s.wait.push_back(ShadowRequest{id, r.input_len, r.slo.tpot_s, output_reserve(r)});
    };
    for (RequestId id : w.wait_batch) add_wait(id);
    if (w.step_in_flight && w.step_is_prefill)
        for (RequestId id : w.step_batch) add_wait(id);
    for (RequestId id : w.run_batch) {
        const Request& r = requests_[id];
        s.run.push_back(ShadowRequest{id, r.current_len, r.slo.tpot_s, output_reserve(r)});
    }
    // Inbound migrations occupy the decode worker's budget before they land.
    for (const auto& in : w.inbound)
        s.run.push_back(ShadowRequest{in.id, in.tokens, in.tpot_s, in.reserve_rem});
    return s;
}

long long Simulation::rr_headroom(const WorkerState& w) const {
    long long pending = 0, reserved = 0;
    auto count_pending = [&](RequestId id) {
        const Request& r = requests_[id];
        pending += r.input_len;
        reserved += output_reserve(r);
    };
    for (RequestId id : w.wait_batch) count_pending(id);
    if (w.step_in_flight && w.step_is_prefill)
        for (RequestId id : w.step_batch) count_pending(id);
    for (RequestId id : w.run_batch) reserved += output_reserve(requests_[id]);
    for (const auto& in : w.inbound) reserved += in.tokens + in.reserve_rem;
    return effective_capacity() - w.kv_used - pending - reserved;
}

SloSpec Simulation::assign_priority_slo(const Request& r) {
    int p = *r.priority;
    bool contended = false;
    if (cfg_.policy == DispatchPolicy::slo_aware) {
        contended = dispatcher_.higher_priority_pending(p);
    } else {
        for (RequestId id : rr_pending_) {
            if (requests_[id].priority && *requests_[id].priority < p) {
                contended = true;
                break;
            }
        }
    }
    return mapper_->assign_slo(p, contended);
}

SimResult Simulation::run() {
    if (requests_.empty()) {
        result_.report = build_report({}, {});
        return std::move(result_);
    }

    for (auto& w : workers_) {
        if (w.status == WorkerStatus::running) {
            open_span(w, 0.0);
            if (w.role != WorkerRole::decode)
                dispatcher_.add_worker(shadow_truth(w));
        }
    }
    for (const auto& r : requests_) push_event(r.arrival_s, SimEventKind::arrival, r.id);
    push_event(cfg_.dispatcher.sync_interval_s, SimEventKind::monitor_tick);
    if (scaler_) push_event(cfg_.scaler.tau_s, SimEventKind::scale_tick);

    while (!queue_.empty()) {
        SimEvent ev = queue_.top();
        queue_.pop();
        if (ev.time > cfg_.max_sim_time_s && !all_done()) {
            result_.stalled = true;
            result_.stall_reason = "deadline_exceeded";
            result_.stuck_requests = pending_requests();
            now_ = cfg_.max_sim_time_s;
            break;
        }
        now_ = ev.time;
        switch (ev.kind) {
            case SimEventKind::arrival: on_arrival(ev); break;
            case SimEventKind::dispatch_wake: on_dispatch_wake(ev); break;
            case SimEventKind::prefill_done: on_prefill_done(ev); break;
            case SimEventKind::decode_step_done: on_decode_step_done(ev); break;
            case SimEventKind::migration_done: on_migration_done(ev); break;
            case SimEventKind::monitor_tick: on_monitor_tick(ev); break;
            case SimEventKind::scale_tick: on_scale_tick(ev); break;
            case SimEventKind::worker_ready: on_worker_ready(ev); break;
        }
        if (all_done()) break;
    }

    if (!all_done() && !result_.stalled) {
        result_.stalled = true;
        result_.stall_reason = "event_queue_empty";
        result_.stuck_requests = pending_requests();
    }

    if (all_done()) {
        for (const auto& w : workers_) {
            if (w.kv_used != 0)
                throw StallError("kv accounting leak on worker " + std::to_string(w.id) +
                                     " after completion: " + std::to_string(w.kv_used),
                                 {});
        }
    }

    double sim_end = all_done() ? last_completion_ : now_;
    result_.sim_end_s = sim_end;
    for (auto& w : workers_) close_span(w, sim_end);
    log(sim_end, "sim_end", -1, -1,
        result_.stalled ? "stalled:" + result_.stall_reason : "complete");

    for (const auto& w : workers_)
        for (const auto& span : w.spans) result_.worker_spans.push_back(span);
    result_.outcomes.reserve(requests_.size());
    for (const auto& r : requests_) result_.outcomes.push_back(measure(r));
    result_.report = build_report(result_.outcomes, result_.worker_spans);
    result_.requests = std::move(requests_);
    return std::move(result_);
}

void Simulation::on_arrival(const SimEvent& ev) {
    Request& r = requests_[ev.request];
    arrival_times_.push_back(now_);
    if (r.priority && mapper_) r.slo = assign_priority_slo(r);
    log(now_, "arrival", r.id, -1, r.task);

    if (cfg_.policy == DispatchPolicy::slo_aware) {
        dispatcher_.enqueue(QueuedRequest{r.id, r.slo.tpot_s, r.slo.ttft_s, r.arrival_s,
                                          r.input_len, task_index(r.task), r.priority});
        schedule_wake(now_);
    } else {
        rr_pending_.push_back(r.id);
        try_rr_dispatch(now_);
    }
}

void Simulation::on_dispatch_wake(const SimEvent& ev) {
    if (ev.time >= next_wake_) next_wake_ = std::numeric_limits<double>::infinity();
    run_dispatch_rounds(now_);
}

void Simulation::run_dispatch_rounds(double now) {
    if (cfg_.policy != DispatchPolicy::slo_aware) return;
    while (!dispatcher_.queue_empty()) {
        auto mm = dispatcher_.min_maturity();
        if (!mm) break;  // no admissible workers registered
        if (*mm > now) {
            schedule_wake(*mm);
            break;
        }
        auto decision = dispatcher_.dispatch_round(now, estimator_);
        if (!decision) break;
        if (decision->admitted.empty()) continue;
        WorkerState& w = workers_[decision->worker];
        for (RequestId id : decision->admitted) {
            Request& r = requests_[id];
            r.ts.dispatch = now;
            w.wait_batch.push_back(id);
            log(now, "dispatch", id, w.id,
                "budget=" + std::to_string(decision->token_limit));
        }
        maybe_start_step(w.id, now);
    }
}

void Simulation::try_rr_dispatch(double now) {
    if (cfg_.policy != DispatchPolicy::round_robin) return;
    WorkerRole target =
        cfg_.mode == ExecMode::collocated ? WorkerRole::collocated : WorkerRole::prefill;
    while (!rr_pending_.empty()) {
        RequestId id = rr_pending_.front();
        Request& r = requests_[id];
        auto pool = pool_workers(target, true);
        auto picked = rr_cursor_.next(pool, [&](WorkerId wid) {
            return rr_headroom(workers_[wid]) >= r.input_len + output_reserve(r);
        });
        if (!picked) break;
        WorkerState& w = workers_[*picked];
        r.ts.dispatch = now;
        w.wait_batch.push_back(id);
        rr_pending_.erase(rr_pending_.begin());
        log(now, "dispatch", id, w.id, "rr");
        maybe_start_step(w.id, now);
    }
}

void Simulation::maybe_start_step(WorkerId wid, double now) {
    WorkerState& w = workers_[wid];
    if (w.step_in_flight) return;
    if (w.status != WorkerStatus::running && w.status != WorkerStatus::draining) return;
    // Collocated interleaving: a pending prefill batch runs ahead of decode
    // iterations.
    if (!w.wait_batch.empty() && w.role != WorkerRole::decode) {
        start_prefill_step(w, now);
    } else if (!w.run_batch.empty() && w.role != WorkerRole::prefill) {
        start_decode_step(w, now);
    }
}

void Simulation::start_prefill_step(WorkerState& w, double now) {
    w.step_batch = std::move(w.wait_batch);
    w.wait_batch.clear();
    w.step_is_prefill = true;
    w.step_in_flight = true;
    std::vector<int> lengths;
    lengths.reserve(w.step_batch.size());
    for (RequestId id : w.step_batch) {
        requests_[id].ts.prefill_start = now;
        lengths.push_back(requests_[id].input_len);
        log(now, "prefill_start", id, w.id);
    }
    double dur = cfg_.scheduler_overhead_s + predict_prefill(cfg_.oracle, lengths);
    w.busy_until = now + dur;
    push_event(w.busy_until, SimEventKind::prefill_done, -1, w.id);
}

void Simulation::start_decode_step(WorkerState& w, double now) {
    w.step_batch = w.run_batch;
    w.step_is_prefill = false;
    w.step_in_flight = true;
    std::vector<int> lengths;
    double min_tpot = std::numeric_limits<double>::infinity();
    lengths.reserve(w.step_batch.size());
    for (RequestId id : w.step_batch) {
        lengths.push_back(requests_[id].current_len);
        min_tpot = std::min(min_tpot, requests_[id].slo.tpot_s);
    }
    double dur = predict_decode_step(cfg_.oracle, lengths);
    if (cfg_.policy == DispatchPolicy::slo_aware) {
        // Budget-admission safety: the oracle step must stay within the
        // tightest TPOT of the batch itself.
        ++result_.decode_steps_checked;
        if (dur > min_tpot + 1e-9) {
            ++result_.decode_guard_violations;
            log(now, "decode_guard_violation", -1, w.id,
                "step=" + csv::format_double(dur) + ",min_tpot=" + csv::format_double(min_tpot));
        }
    }
    w.busy_until = now + dur;
    if (cfg_.log_decode_steps)
        log(now, "decode_step", -1, w.id, "batch=" + std::to_string(w.step_batch.size()));
    push_event(w.busy_until, SimEventKind::decode_step_done, -1, w.id);
}

void Simulation::on_prefill_done(const SimEvent& ev) {
    WorkerState& w = workers_[ev.worker];
    w.step_in_flight = false;
    std::vector<RequestId> batch = std::move(w.step_batch);
    for (size_t i = 0; i < batch.size(); ++i) prefill_times_.push_back(now_);
    w.step_batch.clear();
    for (RequestId id : batch) {
        Request& r = requests_[id];
        r.ts.first_token = now_;
        r.generated = 1;
        r.current_len = r.input_len;
        w.kv_used += r.input_len;
        if (w.kv_used > w.kv_capacity)
            throw StallError("kv overflow on prefill completion (admission must prevent), worker " +
                                 std::to_string(w.id),
                             {id});
        log(now_, "prefill_done", id, w.id);
    }
    for (RequestId id : batch) {
        Request& r = requests_[id];
        if (r.generated >= r.output_len) {
            complete_request(id, w, now_);
        } else if (w.role == WorkerRole::prefill) {
            w.retained.push_back(id);
            migration_queue_.insert(MigKey{r.slo.tpot_s, r.ts.first_token, id});
        } else {
            w.run_batch.push_back(id);
        }
    }
    maybe_start_step(w.id, now_);
    if (cfg_.mode == ExecMode::pd_disaggregated) try_migrations(now_);
    if (cfg_.policy == DispatchPolicy::slo_aware && !dispatcher_.queue_empty())
        schedule_wake(now_);
    else
        try_rr_dispatch(now_);
    check_drain_done(w, now_);
}

void Simulation::on_decode_step_done(const SimEvent& ev) {
    WorkerState& w = workers_[ev.worker];
    w.step_in_flight = false;
    std::vector<RequestId> batch = std::move(w.step_batch);
    w.step_batch.clear();
    for (RequestId id : batch) {
        Request& r = requests_[id];
        r.generated += 1;
        r.current_len += 1;
        w.kv_used += 1;
        if (w.kv_used > w.kv_capacity)
            throw StallError("kv overflow during decode growth, worker " + std::to_string(w.id),
                             {id});
        if (r.generated >= r.output_len) complete_request(id, w, now_);
    }
    maybe_start_step(w.id, now_);
    if (cfg_.mode == ExecMode::pd_disaggregated) try_migrations(now_);
    if (cfg_.policy == DispatchPolicy::slo_aware) {
        if (!dispatcher_.queue_empty()) schedule_wake(now_);
    } else {
        try_rr_dispatch(now_);
    }
    check_drain_done(w, now_);
}

void Simulation::complete_request(RequestId id, WorkerState& w, double now) {
    Request& r = requests_[id];
    r.ts.completion = now;
    w.kv_used -= r.current_len;
    auto it = std::find(w.run_batch.begin(), w.run_batch.end(), id);
    if (it != w.run_batch.end()) w.run_batch.erase(it);
    log(now, "completion", id, w.id);
    estimator_.observe(task_index(r.task), r.output_len);
    if (mapper_ && r.priority) {
        double ttft = r.ts.first_token - r.ts.arrival;
        double tpot =
            r.output_len > 1 ? (r.ts.completion - r.ts.first_token) / (r.output_len - 1) : 0.0;
        double queue_time = time_is_set(r.ts.dispatch) ? r.ts.dispatch - r.ts.arrival : 0.0;
        mapper_->record_completion(CompletionRecord{*r.priority, ttft, tpot, queue_time, now});
    }
    ++completed_;
    completion_times_.push_back(now);
    last_completion_ = now;
}

void Simulation::try_migrations(double now) {
    if (cfg_.mode != ExecMode::pd_disaggregated) return;
    while (!migration_queue_.empty()) {
        MigKey key = *migration_queue_.begin();
        Request& r = requests_[key.id];
        long long need = r.current_len + output_reserve(r);

        WorkerId chosen = -1;
        if (cfg_.policy == DispatchPolicy::round_robin) {
            auto pool = pool_workers(WorkerRole::decode, true);
            auto picked = rr_decode_cursor_.next(
                pool, [&](WorkerId wid) { return rr_headroom(workers_[wid]) >= need; });
            if (picked) chosen = *picked;
        } else {
            // Earliest-maturity decode worker that keeps the projected batch
            // within its tightest TPOT and has the KV headroom. Decode
            // maturity is the end of the current iteration.
            double best_maturity = std::numeric_limits<double>::infinity();
            for (WorkerId wid : pool_workers(WorkerRole::decode, true)) {
                const WorkerState& cand = workers_[wid];
                if (rr_headroom(cand) < need) continue;
                std::vector<int> lengths;
                double min_tpot = r.slo.tpot_s;
                for (RequestId rid : cand.run_batch) {
                    lengths.push_back(requests_[rid].current_len);
                    min_tpot = std::min(min_tpot, requests_[rid].slo.tpot_s);
                }
                for (const auto& in : cand.inbound) {
                    lengths.push_back(in.tokens);
                    min_tpot = std::min(min_tpot, in.tpot_s);
                }
                lengths.push_back(r.current_len);
                if (predict_decode_step(cfg_.estimate, lengths) > min_tpot) continue;
                double maturity = cand.step_in_flight ? cand.busy_until : now;
                if (maturity < best_maturity) {
                    best_maturity = maturity;
                    chosen = wid;
                }
            }
        }

        if (chosen < 0) {
            // Strict queue order: the head waits for capacity; flag requests
            // stuck past their TTFT-equivalent deadline once.
            if (now > r.arrival_s + r.slo.ttft_s && !starvation_logged_.count(key.id)) {
                starvation_logged_.insert(key.id);
                log(now, "violation_risk", key.id, -1, "migration starved");
            }
            break;
        }

        migration_queue_.erase(migration_queue_.begin());
        WorkerState& dst = workers_[chosen];
        WorkerId src = -1;
        for (const auto& w : workers_) {
            if (std::find(w.retained.begin(), w.retained.end(), key.id) != w.retained.end()) {
                src = w.id;
                break;
            }
        }
        r.ts.migration_start = now;
        dst.inbound.push_back(
            WorkerState::Inbound{key.id, r.current_len, r.slo.tpot_s, output_reserve(r)});
        migrating_[key.id] = {src, chosen};
        double dur = cfg_.kv_link.base_latency_s + cfg_.kv_link.per_token_s * r.current_len;
        log(now, "migration_start", key.id, chosen, "src=" + std::to_string(src));
        push_event(now + dur, SimEventKind::migration_done, key.id, chosen);
    }
}

void Simulation::on_migration_done(const SimEvent& ev) {
    Request& r = requests_[ev.request];
    auto [src_id, dst_id] = migrating_.at(ev.request);
    migrating_.erase(ev.request);
    WorkerState& src = workers_[src_id];
    WorkerState& dst = workers_[dst_id];

    auto rit = std::find(src.retained.begin(), src.retained.end(), ev.request);
    src.retained.erase(rit);
    src.kv_used -= r.current_len;

    auto iit = std::find_if(dst.inbound.begin(), dst.inbound.end(),
                            [&](const WorkerState::Inbound& in) { return in.id == ev.request; });
    dst.inbound.erase(iit);
    dst.kv_used += r.current_len;
    if (dst.kv_used > dst.kv_capacity)
        throw StallError("kv overflow on migration landing, worker " + std::to_string(dst.id),
                         {ev.request});
    dst.run_batch.push_back(ev.request);
    r.ts.migration_end = now_;
    ++result_.migrations;
    log(now_, "migration_done", ev.request, dst_id, "src=" + std::to_string(src_id));

    maybe_start_step(dst.id, now_);
    try_migrations(now_);
    if (cfg_.policy == DispatchPolicy::slo_aware) {
        if (!dispatcher_.queue_empty()) schedule_wake(now_);
    } else {
        try_rr_dispatch(now_);
    }
    check_drain_done(src, now_);
}

void Simulation::on_monitor_tick(const SimEvent& ev) {
    for (const auto& w : workers_) {
        if (w.status != WorkerStatus::running && w.status != WorkerStatus::draining) continue;
        if (dispatcher_.has_worker(w.id)) dispatcher_.sync_worker(shadow_truth(w));
    }
    if (cfg_.policy == DispatchPolicy::slo_aware && !dispatcher_.queue_empty())
        schedule_wake(now_);
    if (!all_done()) push_event(now_ + cfg_.dispatcher.sync_interval_s, SimEventKind::monitor_tick);
}

PoolMetrics Simulation::overall_metrics(double now) const {
    PoolMetrics m;
    for (const auto& w : workers_) {
        if (w.status != WorkerStatus::running) continue;
        m.utils.push_back(static_cast<double>(w.kv_used) / w.kv_capacity);
    }
    if (cfg_.policy == DispatchPolicy::slo_aware) {
        m.wait_ratios = dispatcher_.wait_ratios(now);
    } else {
        for (RequestId id : rr_pending_) {
            const Request& r = requests_[id];
            m.wait_ratios.push_back((now - r.arrival_s) / r.slo.ttft_s);
        }
    }
    for (const auto& key : migration_queue_) {
        const Request& r = requests_[key.id];
        m.wait_ratios.push_back((now - r.ts.first_token) / r.slo.tpot_s);
    }
    m.r_in = windowed_rate(arrival_times_, now);
    m.r_process = windowed_rate(completion_times_, now);
    return m;
}

PoolMetrics Simulation::pool_metrics(WorkerRole role, double now) const {
    PoolMetrics m;
    for (const auto& w : workers_) {
        if (w.status != WorkerStatus::running || w.role != role) continue;
        m.utils.push_back(static_cast<double>(w.kv_used) / w.kv_capacity);
    }
    if (role == WorkerRole::prefill) {
        if (cfg_.policy == DispatchPolicy::slo_aware) {
            m.wait_ratios = dispatcher_.wait_ratios(now);
        } else {
            for (RequestId id : rr_pending_) {
                const Request& r = requests_[id];
                m.wait_ratios.push_back((now - r.arrival_s) / r.slo.ttft_s);
            }
        }
        m.r_in = windowed_rate(arrival_times_, now);
        m.r_process = windowed_rate(prefill_times_, now);
    } else {
        for (const auto& key : migration_queue_) {
            const Request& r = requests_[key.id];
            m.wait_ratios.push_back((now - r.ts.first_token) / r.slo.tpot_s);
        }
        m.r_in = windowed_rate(prefill_times_, now);
        m.r_process = windowed_rate(completion_times_, now);
    }
    return m;
}

void Simulation::on_scale_tick(const SimEvent& ev) {
    if (!scaler_) return;
    PoolMetrics overall = overall_metrics(now_);
    std::optional<PoolMetrics> pre, dec;
    int pre_count = 0, dec_count = 0;
    if (cfg_.mode == ExecMode::pd_disaggregated) {
        pre = pool_metrics(WorkerRole::prefill, now_);
        dec = pool_metrics(WorkerRole::decode, now_);
        pre_count = static_cast<int>(pool_workers(WorkerRole::prefill, false).size());
        dec_count = static_cast<int>(pool_workers(WorkerRole::decode, false).size());
        last_prefill_metrics_ = pre;
        last_decode_metrics_ = dec;
    }
    auto actions = scaler_->scale_tick(now_, overall, running_count(), warm_count(), pre, dec,
                                       pre_count, dec_count);
    for (const auto& a : actions) apply_scale_action(a, now_);
    // drop rate samples that fell out of every window
    double cutoff = now_ - rate_window_s();
    auto prune = [cutoff](std::deque<double>& d) {
        while (!d.empty() && d.front() <= cutoff) d.pop_front();
    };
    prune(arrival_times_);
    prune(completion_times_);
    prune(prefill_times_);
    if (!all_done()) push_event(now_ + cfg_.scaler.tau_s, SimEventKind::scale_tick);
}

void Simulation::apply_scale_action(const ScaleAction& action, double now) {
    switch (action.kind) {
        case ScaleActionKind::scale_out: {
            WorkerState* target = nullptr;
            for (auto& w : workers_) {
                if (w.status == WorkerStatus::warm) {
                    target = &w;
                    break;
                }
            }
            if (!target) return;
            target->status = WorkerStatus::loading;
            open_span(*target, now);
            ++result_.scale_outs;
            log(now, "scale_out", -1, target->id,
                std::string(action.fast_path_failed ? "fast_failed_disk" : "") +
                    (action.fast_path_failed ? "," : "") +
                    "delay=" + csv::format_double(action.provisioning_delay_s));
            push_event(now + action.provisioning_delay_s, SimEventKind::worker_ready, -1,
                       target->id);
            break;
        }
        case ScaleActionKind::scale_in: {
            // Least-loaded running worker; in disaggregated mode prefer the
            // cooler pool, never emptying either role.
            std::vector<WorkerId> candidates;
            if (cfg_.mode == ExecMode::collocated) {
                candidates = pool_workers(WorkerRole::collocated, true);
            } else {
                double mp = last_prefill_metrics_
                                ? load_metric(last_prefill_metrics_->utils,
                                              last_prefill_metrics_->wait_ratios,
                                              last_prefill_metrics_->r_in,
                                              last_prefill_metrics_->r_process)
                                : 0.0;
                double md = last_decode_metrics_
                                ? load_metric(last_decode_metrics_->utils,
                                              last_decode_metrics_->wait_ratios,
                                              last_decode_metrics_->r_in,
                                              last_decode_metrics_->r_process)
                                : 0.0;
                WorkerRole cold = mp <= md ? WorkerRole::prefill : WorkerRole::decode;
                candidates = pool_workers(cold, true);
                if (candidates.size() <= 1) {
                    WorkerRole other =
                        cold == WorkerRole::prefill ? WorkerRole::decode : WorkerRole::prefill;
                    auto alt = pool_workers(other, true);
                    if (alt.size() > 1) candidates = alt;
                }
                if (candidates.size() <= 1) return;
            }
            if (candidates.empty()) return;
            WorkerId best = candidates[0];
            for (WorkerId wid : candidates) {
                const WorkerState& a = workers_[wid];
                const WorkerState& b = workers_[best];
                if (std::make_tuple(a.load_size(), a.kv_used, a.id) <
                    std::make_tuple(b.load_size(), b.kv_used, b.id))
                    best = wid;
            }
            WorkerState& w = workers_[best];
            w.drain_requested = true;
            w.status = WorkerStatus::draining;
            dispatcher_.remove_worker(w.id);
            ++result_.scale_ins;
            log(now, "scale_in_start", -1, w.id, "draining");
            check_drain_done(w, now);
            break;
        }
        case ScaleActionKind::flip_to_prefill:
        case ScaleActionKind::flip_to_decode: {
            WorkerRole cold = action.kind == ScaleActionKind::flip_to_prefill
                                  ? WorkerRole::decode
                                  : WorkerRole::prefill;
            WorkerRole hot = cold == WorkerRole::decode ? WorkerRole::prefill : WorkerRole::decode;
            auto pool = pool_workers(cold, true);
            if (pool.size() <= 1) return;
            WorkerId best = pool[0];
            for (WorkerId wid : pool) {
                const WorkerState& a = workers_[wid];
                const WorkerState& b = workers_[best];
                if (std::make_tuple(a.load_size(), a.kv_used, a.id) <
                    std::make_tuple(b.load_size(), b.kv_used, b.id))
                    best = wid;
            }
            WorkerState& w = workers_[best];
            w.pending_role = hot;
            dispatcher_.remove_worker(w.id);
            log(now, "role_flip_start", -1, w.id,
                std::string("to=") + to_string(hot));
            check_drain_done(w, now);
            break;
        }
    }
}

void Simulation::check_drain_done(WorkerState& w, double now) {
    if (!w.drain_requested && !w.pending_role) return;
    bool empty = w.wait_batch.empty() && w.run_batch.empty() && w.retained.empty() &&
                 !w.step_in_flight && w.inbound.empty();
    if (!empty) return;
    if (w.pending_role) {
        apply_role_flip(w, now);
    } else {
        finalize_stop(w, now);
    }
}

void Simulation::apply_role_flip(WorkerState& w, double now) {
    w.role = *w.pending_role;
    w.pending_role.reset();
    ++result_.role_flips;
    log(now, "role_change", -1, w.id, to_string(w.role));
    if (w.role != WorkerRole::decode) {
        WorkerShadow s = shadow_truth(w);
        s.maturity = now;
        dispatcher_.add_worker(s);
        if (!dispatcher_.queue_empty()) schedule_wake(now);
    } else {
        try_migrations(now);
    }
}

void Simulation::finalize_stop(WorkerState& w, double now) {
    w.drain_requested = false;
    w.status = WorkerStatus::warm;  // back to the warm pool, weights dropped
    close_span(w, now);
    log(now, "worker_stopped", -1, w.id);
}

void Simulation::on_worker_ready(const SimEvent& ev) {
    WorkerState& w = workers_[ev.worker];
    if (w.status != WorkerStatus::loading) return;
    w.status = WorkerStatus::running;
    if (cfg_.mode == ExecMode::pd_disaggregated) {
        // Join whichever role ran hotter at the last scaling decision.
        double mp = last_prefill_metrics_
                        ? load_metric(last_prefill_metrics_->utils,
                                      last_prefill_metrics_->wait_ratios,
                                      last_prefill_metrics_->r_in,
                                      last_prefill_metrics_->r_process)
                        : 0.0;
        double md = last_decode_metrics_
                        ? load_metric(last_decode_metrics_->utils, last_decode_metrics_->wait_ratios,
                                      last_decode_metrics_->r_in, last_decode_metrics_->r_process)
                        : 0.0;
        w.role = mp >= md ? WorkerRole::prefill : WorkerRole::decode;
    }
    log(now_, "worker_ready", -1, w.id, to_string(w.role));
    if (w.role != WorkerRole::decode && cfg_.policy == DispatchPolicy::slo_aware) {
        WorkerShadow s = shadow_truth(w);
        s.maturity = now_;
        dispatcher_.add_worker(s);
        if (!dispatcher_.queue_empty()) schedule_wake(now_);
    }
    if (cfg_.mode == ExecMode::pd_disaggregated) try_migrations(now_);
    try_rr_dispatch(now_);
}

std::string events_to_csv(const std::vector<LogRecord>& events) {
    std::string out = "time_s,event,request_id,worker_id,detail\n";
    for (const auto& e : events) {
        out += csv::join({csv::format_double(e.time_s), e.event,
                          e.request >= 0 ? std::to_string(e.request) : std::string(),
                          e.worker >= 0 ? std::to_string(e.worker) : std::string(), e.detail});
        out += '\n';
    }
    return out;
}

SimResult run_simulation(const RunConfig& cfg) {
    auto trace = generate(cfg.workload.tasks, cfg.workload.per_task_count, cfg.workload.qps,
                          cfg.workload.seed);
    Simulation sim(cfg, std::move(trace));
    return sim.run();
}

}  // namespace slosim
