#include "slosim/priority_mapper.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "slosim/workload.hpp"

namespace slosim {

std::optional<std::size_t> priority_index(int priority, const std::vector<int>& counts,
                                          int levels) {
    if (priority < 0 || priority >= levels)
        throw std::invalid_argument("priority out of range");
    if (static_cast<int>(counts.size()) != levels)
        throw std::invalid_argument("counts size mismatches levels");
    long long total = 0;
    for (int c : counts) total += c;
    if (total == 0) return std::nullopt;

    long long base = 0;
    for (int i = 0; i < priority; ++i) base += counts[i];
    // floor((p+1)/(N+1) * C_p), exact in integer arithmetic
    long long offset =
        (static_cast<long long>(priority + 1) * counts[priority]) / (levels + 1);
    long long idx = std::clamp(base + offset, 0LL, total - 1);
    return static_cast<std::size_t>(idx);
}

SloWindow::SloWindow(int levels, std::size_t window_size, std::vector<PriorityBounds> bounds)
    : levels_(levels),
      window_size_(window_size),
      bounds_(std::move(bounds)),
      counts_(levels, 0),
      last_queue_time_(levels, 0.0) {
    if (levels < 1) throw std::invalid_argument("levels must be >= 1");
    if (window_size == 0) throw std::invalid_argument("window size must be >= 1");
    if (bounds_.size() != static_cast<std::size_t>(levels))
        throw std::invalid_argument("need one bounds entry per priority level");
    for (const auto& b : bounds_) {
        if (b.min_ttft > b.max_ttft || b.min_tpot > b.max_tpot)
            throw std::invalid_argument("priority bounds must satisfy min <= max");
    }
}

SloSpec SloWindow::assign_slo(int priority, bool higher_priority_pending) {
    const PriorityBounds& b = bounds_.at(priority);
    auto idx = priority_index(priority, counts_, levels_);
    if (!idx) {
        return SloSpec{(b.min_ttft + b.max_ttft) / 2.0, (b.min_tpot + b.max_tpot) / 2.0};
    }
    if (higher_priority_pending && priority > 0) {
        // Stricter classes are waiting: hand this request the loose end of its
        // range so it does not compete for the contended capacity.
        return SloSpec{b.max_ttft, b.max_tpot};
    }
    const TtftEntry& te = ttft_records_[*idx];
    double ttft = te.ttft - (te.queue_time - last_queue_time_[priority]);
    last_queue_time_[priority] = te.queue_time;
    double tpot = tpot_records_[*idx].tpot;
    ttft = std::clamp(ttft, b.min_ttft, b.max_ttft);
    tpot = std::clamp(tpot, b.min_tpot, b.max_tpot);
    return SloSpec{ttft, tpot};
}

void SloWindow::record_completion(const CompletionRecord& rec) {
    if (rec.priority < 0 || rec.priority >= levels_)
        throw std::invalid_argument("completion priority out of range");

    TtftEntry te{rec.ttft_s, rec.queue_time_s, rec.priority, rec.completion_s, next_seq_};
    TpotEntry pe{rec.tpot_s, rec.priority, rec.completion_s, next_seq_};
    ++next_seq_;

    auto ti = std::upper_bound(ttft_records_.begin(), ttft_records_.end(), te,
                               [](const TtftEntry& a, const TtftEntry& b) { return a.ttft < b.ttft; });
    ttft_records_.insert(ti, te);
    auto pi = std::upper_bound(tpot_records_.begin(), tpot_records_.end(), pe,
                               [](const TpotEntry& a, const TpotEntry& b) { return a.tpot < b.tpot; });
    tpot_records_.insert(pi, pe);
    counts_[rec.priority] += 1;

    if (ttft_records_.size() > window_size_) {
        // Evict the oldest record by completion time (seq breaks ties), from
        // both windows, and release its priority count.
        auto oldest = std::min_element(ttft_records_.begin(), ttft_records_.end(),
                                       [](const TtftEntry& a, const TtftEntry& b) {
                                           return std::tie(a.completion, a.seq) <
                                                  std::tie(b.completion, b.seq);
                                       });
        std::uint64_t victim_seq = oldest->seq;
        counts_[oldest->priority] -= 1;
        ttft_records_.erase(oldest);
        auto po = std::find_if(tpot_records_.begin(), tpot_records_.end(),
                               [victim_seq](const TpotEntry& e) { return e.seq == victim_seq; });
        tpot_records_.erase(po);
    }
}

std::vector<double> SloWindow::ttft_values() const {
    std::vector<double> out;
    out.reserve(ttft_records_.size());
    for (const auto& e : ttft_records_) out.push_back(e.ttft);
    return out;
}

std::vector<double> SloWindow::tpot_values() const {
    std::vector<double> out;
    out.reserve(tpot_records_.size());
    for (const auto& e : tpot_records_) out.push_back(e.tpot);
    return out;
}

std::vector<PriorityBounds> default_priority_bounds(const std::string& task_set) {
    auto tasks = builtin_task_set(task_set, false);
    std::vector<PriorityBounds> bounds;
    bounds.reserve(tasks.size());
    for (const auto& t : tasks) {
        bounds.push_back(PriorityBounds{t.slo->ttft_s * 0.75, t.slo->ttft_s * 1.25,
                                        t.slo->tpot_s * 0.75, t.slo->tpot_s * 1.25});
    }
    return bounds;
}

}  // namespace slosim
