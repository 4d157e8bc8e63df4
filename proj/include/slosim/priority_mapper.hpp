#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "slosim/types.hpp"

namespace slosim {

struct PriorityBounds {
    double min_ttft = 0.0;
    double max_ttft = 0.0;
    double min_tpot = 0.0;
    double max_tpot = 0.0;
};

// Index into a sorted window biased so higher priorities read lower-latency
// entries: base counts all higher-priority records, the offset places the
// request within its own class. Returns nullopt when the window is empty;
// otherwise the index is clamped to the window.
std::optional<std::size_t> priority_index(int priority, const std::vector<int>& counts,
                                          int levels);

struct CompletionRecord {
    int priority = 0;
    double ttft_s = 0.0;
    double tpot_s = 0.0;
    double queue_time_s = 0.0;   // dispatch - arrival of the completed request
    double completion_s = 0.0;
};

// Derives (TTFT, TPOT) targets for priority-tagged requests from sliding
// windows of recent outcomes. Window eviction is by completion time.
class SloWindow {
public:
    SloWindow(int levels, std::size_t window_size, std::vector<PriorityBounds> bounds);

    // `higher_priority_pending`: whether any request of a stricter priority is
    // waiting in the dispatch queue at assignment time. Under that contention
    // a lower-priority request is pinned to the loose end of its bounds so
    // capacity stays with the stricter classes; otherwise the looked-up value
    // is clamped into the bounds as usual.
    SloSpec assign_slo(int priority, bool higher_priority_pending);

    void record_completion(const CompletionRecord& rec);

    const std::vector<int>& counts() const { return counts_; }
    std::size_t size() const { return ttft_records_.size(); }
    const PriorityBounds& bounds(int priority) const { return bounds_.at(priority); }
    int levels() const { return levels_; }

    // Sorted latency views, exposed for tests.
    std::vector<double> ttft_values() const;
    std::vector<double> tpot_values() const;

private:
    struct TtftEntry {
        double ttft;
        double queue_time;
        int priority;
        double completion;
        std::uint64_t seq;
    };
    struct TpotEntry {
        double tpot;
        int priority;
        double completion;
        std::uint64_t seq;
    };

    int levels_;
    std::size_t window_size_;
    std::vector<PriorityBounds> bounds_;
    std::vector<TtftEntry> ttft_records_;  // sorted by ttft
    std::vector<TpotEntry> tpot_records_;  // sorted by tpot
    std::vector<int> counts_;
    std::vector<double> last_queue_time_;
    std::uint64_t next_seq_ = 0;
};

// Table-1-derived default bounds: per-priority median SLO +/- 25%.
std::vector<PriorityBounds> default_priority_bounds(const std::string& task_set);

}  // namespace slosim
