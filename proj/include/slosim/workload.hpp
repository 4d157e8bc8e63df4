#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slosim/types.hpp"

namespace slosim {

// Draws one request stream: each task contributes per_task_count requests
// from its own Poisson process (rate qps / num_tasks unless the task carries
// a qps override), token lengths from a rounded normal truncated below at 1.
// The returned trace is sorted by arrival time; ids are assigned in sorted
// order so ties break by id. Identical seeds give identical traces.
std::vector<Request> generate(const std::vector<TaskSpec>& tasks, int per_task_count,
                              double qps, std::uint64_t seed);

// Named benchmark task sets ("4task", "2task"). `priority_mode` replaces each
// task's absolute SLO with a priority level assigned in row order, tightest
// SLO first.
std::map<std::string, std::vector<TaskSpec>> builtin_task_sets(bool priority_mode = false);
std::vector<TaskSpec> builtin_task_set(const std::string& name, bool priority_mode = false);

// Trace CSV, header: id,task,arrival_s,input_len,output_len,priority_or_ttft,tpot
// Priority-mode rows leave the tpot column empty.
std::string trace_to_csv(const std::vector<Request>& trace);
std::vector<Request> trace_from_csv(const std::string& text);

}  // namespace slosim
