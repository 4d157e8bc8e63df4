#include "slosim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "slosim/csv.hpp"
#include "json.hpp"

namespace slosim {

RequestOutcome measure(const Request& r) {
    RequestOutcome out;
    out.id = r.id;
    out.task = r.task;
    out.arrival_s = r.ts.arrival;
    out.first_token_s = r.ts.first_token;
    out.completion_s = r.ts.completion;
    out.slo = r.slo;
    out.priority = r.priority;
    out.completed = time_is_set(r.ts.completion);
    if (time_is_set(r.ts.first_token)) out.ttft_s = r.ts.first_token - r.ts.arrival;
    if (out.completed) {
        // Mean per-token time after the first; a single-token request meets
        // TPOT vacuously.
        out.tpot_s = r.output_len > 1
                         ? (r.ts.completion - r.ts.first_token) / (r.output_len - 1)
                         : 0.0;
    }
    out.ttft_met = out.completed && time_is_set(out.ttft_s) && out.ttft_s <= r.slo.ttft_s;
    out.tpot_met = out.completed && time_is_set(out.tpot_s) && out.tpot_s <= r.slo.tpot_s;
    return out;
}

double attainment(const std::vector<RequestOutcome>& outcomes) {
    if (outcomes.empty()) throw std::invalid_argument("attainment undefined for zero requests");
    long long met = 0;
    for (const auto& r : outcomes)
        if (r.ttft_met && r.tpot_met) ++met;
    return static_cast<double>(met) / static_cast<double>(outcomes.size());
}

double cost_seconds(const std::vector<WorkerSpan>& spans, double unit_cost) {
    double total = 0.0;
    for (const auto& s : spans) total += (s.end_s - s.start_s) * unit_cost;
    return total;
}

long long cost_units(const std::vector<WorkerSpan>& spans) {
    // One unit = one instance active for 50 ms, rounded up per worker.
    std::map<WorkerId, double> per_worker;
    for (const auto& s : spans) per_worker[s.worker] += s.end_s - s.start_s;
    long long units = 0;
    for (const auto& [id, active] : per_worker)
        units += static_cast<long long>(std::ceil(active / 0.05 - 1e-9));
    return units;
}

double e2e_latency(const RequestOutcome& r) {
    if (!r.completed) throw std::invalid_argument("e2e_latency: request incomplete");
    return r.completion_s - r.arrival_s;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(q * values.size() - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

RunReport build_report(const std::vector<RequestOutcome>& outcomes,
                       const std::vector<WorkerSpan>& spans) {
    RunReport rep;
    std::vector<double> e2e;
    std::map<std::string, std::vector<const RequestOutcome*>> by_task;
    for (const auto& r : outcomes) {
        by_task[r.task].push_back(&r);
        if (!r.completed) {
            ++rep.incomplete;
            ++rep.violations_both;
            continue;
        }
        ++rep.completed;
        e2e.push_back(e2e_latency(r));
        if (!r.ttft_met && !r.tpot_met)
            ++rep.violations_both;
        else if (!r.ttft_met)
            ++rep.violations_ttft_only;
        else if (!r.tpot_met)
            ++rep.violations_tpot_only;
    }
    if (!outcomes.empty()) rep.attainment = attainment(outcomes);
    rep.cost_seconds = cost_seconds(spans);
    rep.cost_units = cost_units(spans);
    rep.p50_e2e_s = percentile(e2e, 0.50);
    rep.p95_e2e_s = percentile(e2e, 0.95);
    rep.p99_e2e_s = percentile(e2e, 0.99);

    for (const auto& [task, rs] : by_task) {
        TaskBreakdown tb;
        tb.count = static_cast<int>(rs.size());
        std::vector<double> task_e2e;
        int met = 0;
        for (const auto* r : rs) {
            if (r->ttft_met && r->tpot_met) ++met;
            if (r->completed) task_e2e.push_back(e2e_latency(*r));
        }
        tb.attainment = static_cast<double>(met) / tb.count;
        tb.p50_e2e_s = percentile(task_e2e, 0.50);
        tb.p95_e2e_s = percentile(task_e2e, 0.95);
        tb.p99_e2e_s = percentile(task_e2e, 0.99);
        rep.per_task[task] = tb;
    }
    return rep;
}

std::string report_to_json(const RunReport& rep) {
    nlohmann::json j;
    if (rep.completed + rep.incomplete > 0)
        j["attainment"] = rep.attainment;
    else
        j["attainment"] = nullptr;
    j["cost_units"] = rep.cost_units;
    j["cost_seconds"] = rep.cost_seconds;
    j["p50_e2e_s"] = rep.p50_e2e_s;
    j["p95_e2e_s"] = rep.p95_e2e_s;
    j["p99_e2e_s"] = rep.p99_e2e_s;
    j["completed"] = rep.completed;
    j["incomplete"] = rep.incomplete;
    j["violations"] = {{"ttft_only", rep.violations_ttft_only},
                       {"tpot_only", rep.violations_tpot_only},
                       {"both", rep.violations_both}};
    j["per_task"] = nlohmann::json::object();
    for (const auto& [task, tb] : rep.per_task) {
        j["per_task"][task] = {{"count", tb.count},
                               {"attainment", tb.attainment},
                               {"p50_e2e_s", tb.p50_e2e_s},
                               {"p95_e2e_s", tb.p95_e2e_s},
                               {"p99_e2e_s", tb.p99_e2e_s}};
    }
    return j.dump(2) + "\n";
}

std::string outcomes_to_csv(const std::vector<RequestOutcome>& outcomes) {
    std::string out =
        "id,task,arrival_s,first_token_s,completion_s,ttft_s,tpot_s,ttft_met,tpot_met\n";
    auto opt = [](double v) { return time_is_set(v) ? csv::format_double(v) : std::string(); };
    for (const auto& r : outcomes) {
        out += csv::join({std::to_string(r.id), r.task, csv::format_double(r.arrival_s),
                          opt(r.first_token_s), opt(r.completion_s), opt(r.ttft_s), opt(r.tpot_s),
                          r.ttft_met ? "1" : "0", r.tpot_met ? "1" : "0"});
        out += '\n';
    }
    return out;
}

std::vector<RequestOutcome> outcomes_from_csv(const std::string& text) {
    std::vector<RequestOutcome> out;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        auto fields = csv::split(line);
        if (fields.size() != 9) throw std::invalid_argument("results csv: bad row: " + line);
        RequestOutcome r;
        r.id = csv::parse_int(fields[0]);
        r.task = fields[1];
        r.arrival_s = csv::parse_double(fields[2]);
        r.first_token_s = fields[3].empty() ? kUnsetTime : csv::parse_double(fields[3]);
        r.completion_s = fields[4].empty() ? kUnsetTime : csv::parse_double(fields[4]);
        r.ttft_s = fields[5].empty() ? kUnsetTime : csv::parse_double(fields[5]);
        r.tpot_s = fields[6].empty() ? kUnsetTime : csv::parse_double(fields[6]);
        r.completed = time_is_set(r.completion_s);
        r.ttft_met = fields[7] == "1";
        r.tpot_met = fields[8] == "1";
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace slosim
