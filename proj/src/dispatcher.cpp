#include "slosim/dispatcher.hpp"

#include <algorithm>
#include <cmath>

namespace slosim {

long long compute_ntoken(double ttft_s, double tpot_s, double e_d_s, double coeff_a,
                         double coeff_b, long long max_budget) {
    if (tpot_s <= e_d_s) return 0;
    double numerator = ttft_s * tpot_s - ttft_s * e_d_s - coeff_a * tpot_s;
    if (numerator <= 0.0) return 0;
    if (coeff_b <= 0.0) return max_budget;
    double n = numerator / (coeff_b * tpot_s);
    // absorb binary round-off so exact-arithmetic budgets land on the integer
    long long tokens = static_cast<long long>(std::floor(n + 1e-9));
    return std::min(tokens, max_budget);
}

double calculate_p(double arrival_s, double ttft_s, double now_s, double expected_prefill_s,
                   double kv_utilization, double util_weight) {
    double t_remaining = (arrival_s + ttft_s) - (now_s + expected_prefill_s);
    if (t_remaining <= 0.0) return 0.0;
    double slack = std::clamp(t_remaining / ttft_s, 0.0, 1.0);
    return slack * (1.0 - util_weight * kv_utilization);
}

double maturity_after_dispatch(double now_s, double e_p_s, double e_d_s, double min_tpot_s) {
    double relax = min_tpot_s - e_d_s;
    if (relax <= 0.0) return now_s + e_p_s;
    return now_s + e_p_s + (e_p_s / relax) * e_d_s;
}

Dispatcher::Dispatcher(DispatcherConfig config, const LatencyModel* estimate_model)
    : config_(config), model_(estimate_model) {}

void Dispatcher::enqueue(const QueuedRequest& r) {
    queue_.emplace(std::make_tuple(r.tpot_s, r.arrival_s, r.id), r);
}

bool Dispatcher::higher_priority_pending(int priority) const {
    for (const auto& [key, r] : queue_) {
        if (r.priority && *r.priority < priority) return true;
    }
    return false;
}

std::vector<double> Dispatcher::wait_ratios(double now) const {
    std::vector<double> out;
    out.reserve(queue_.size());
    for (const auto& [key, r] : queue_) out.push_back((now - r.arrival_s) / r.ttft_s);
    return out;
}

void Dispatcher::add_worker(const WorkerShadow& shadow) {
    shadows_[shadow.id] = shadow;
    worker_queue_.emplace(shadow.maturity, shadow.id);
}

void Dispatcher::remove_worker(WorkerId id) {
    auto it = shadows_.find(id);
    if (it == shadows_.end()) return;
    worker_queue_.erase({it->second.maturity, id});
    shadows_.erase(it);
}

void Dispatcher::sync_worker(const WorkerShadow& truth) {
    auto it = shadows_.find(truth.id);
    if (it == shadows_.end()) return;
    double maturity = it->second.maturity;  // maturity is dispatcher-owned
    it->second = truth;
    it->second.maturity = maturity;
}

std::optional<double> Dispatcher::min_maturity() const {
    if (worker_queue_.empty()) return std::nullopt;
    return worker_queue_.begin()->first;
}

double Dispatcher::expected_prefill_single(int input_len) const {
    int len[1] = {input_len};
    return predict_prefill(*model_, len);
}

long long Dispatcher::token_budget(const WorkerShadow& shadow) const {
    // Tightest targets among pending requests and the worker's residents.
    double ttft_tight = std::numeric_limits<double>::infinity();
    double tpot_tight = std::numeric_limits<double>::infinity();
    for (const auto& [key, r] : queue_) {
        ttft_tight = std::min(ttft_tight, r.ttft_s);
        tpot_tight = std::min(tpot_tight, r.tpot_s);
    }
    for (const auto& r : shadow.wait) tpot_tight = std::min(tpot_tight, r.tpot_s);
    for (const auto& r : shadow.run) tpot_tight = std::min(tpot_tight, r.tpot_s);
    if (!std::isfinite(ttft_tight)) return 0;

    // Decode-step estimate for the work already on the worker. Prefill-role
    // workers never decode, so their estimate is zero.
    double e_d = 0.0;
    if (shadow.role != WorkerRole::prefill) {
        std::vector<int> lengths;
        lengths.reserve(shadow.wait.size() + shadow.run.size());
        for (const auto& r : shadow.wait) lengths.push_back(r.tokens);
        for (const auto& r : shadow.run) lengths.push_back(r.tokens);
        if (!lengths.empty()) e_d = predict_decode_step(*model_, lengths);
    }
    return compute_ntoken(ttft_tight, tpot_tight, e_d, model_->a, model_->b,
                          config_.max_token_budget);
}

std::optional<DispatchDecision> Dispatcher::dispatch_round(double now, const OutputEstimator& est) {
    if (worker_queue_.empty()) return std::nullopt;
    auto top = *worker_queue_.begin();
    worker_queue_.erase(worker_queue_.begin());
    WorkerShadow& shadow = shadows_.at(top.second);

    DispatchDecision decision;
    decision.worker = shadow.id;

    long long admitted_tokens = 0;
    if (!queue_.empty()) {
        decision.token_limit = std::min(shadow.free_tokens(), token_budget(shadow));
        double util = shadow.utilization();
        std::vector<std::tuple<double, double, RequestId>> taken;
        std::vector<const QueuedRequest*> overdue;
        for (const auto& [key, r] : queue_) {
            double p = calculate_p(r.arrival_s, r.ttft_s, now, expected_prefill_single(r.input_len),
                                   util, config_.util_weight);
            if (p >= config_.theta) {
                if (admitted_tokens + r.input_len < decision.token_limit) {
                    admitted_tokens += r.input_len;
                    decision.admitted.push_back(r.id);
                    taken.push_back(key);
                }
            } else if (config_.serve_overdue && p == 0.0) {
                double t_remaining =
                    (r.arrival_s + r.ttft_s) - (now + expected_prefill_single(r.input_len));
                if (t_remaining <= 0.0) overdue.push_back(&r);
            }
        }
        // Deadline-missed requests can never clear the probability gate again;
        // serve them with whatever budget the feasible ones left over.
        for (const QueuedRequest* r : overdue) {
            if (admitted_tokens + r->input_len < decision.token_limit) {
                admitted_tokens += r->input_len;
                decision.admitted.push_back(r->id);
                taken.push_back(std::make_tuple(r->tpot_s, r->arrival_s, r->id));
            }
        }
        for (const auto& key : taken) {
            const QueuedRequest& r = queue_.at(key);
            shadow.wait.push_back(
                ShadowRequest{r.id, r.input_len, r.tpot_s, est.reserve_tokens(r.task_idx)});
            queue_.erase(key);
        }
    }

    // Recompute maturity for the new load.
    if (shadow.wait.empty() && shadow.run.empty()) {
        shadow.maturity = now + config_.poll_interval_s;
    } else if (shadow.wait.empty()) {
        std::vector<int> lengths;
        for (const auto& r : shadow.run) lengths.push_back(r.tokens);
        shadow.maturity = now + predict_decode_step(*model_, lengths);
    } else {
        std::vector<int> prefill_lengths;
        for (const auto& r : shadow.wait) prefill_lengths.push_back(r.tokens);
        double e_p = predict_prefill(*model_, prefill_lengths);
        if (shadow.role == WorkerRole::prefill) {
            // Prefill steps are non-interruptible; the worker matures when its
            // next batch completes.
            shadow.maturity = now + e_p;
        } else {
            std::vector<int> lengths = prefill_lengths;
            double min_tpot = std::numeric_limits<double>::infinity();
            for (const auto& r : shadow.wait) min_tpot = std::min(min_tpot, r.tpot_s);
            for (const auto& r : shadow.run) {
                lengths.push_back(r.tokens);
                min_tpot = std::min(min_tpot, r.tpot_s);
            }
            double e_d = predict_decode_step(*model_, lengths);
            shadow.maturity = maturity_after_dispatch(now, e_p, e_d, min_tpot);
        }
    }
    if (decision.admitted.empty()) {
        // No progress was made on this worker; hold off a full poll interval
        // so same-timestamp rounds cannot spin.
        shadow.maturity = std::max(shadow.maturity, now + config_.poll_interval_s);
    }
    worker_queue_.emplace(shadow.maturity, shadow.id);
    decision.new_maturity = shadow.maturity;
    return decision;
}

}  // namespace slosim
