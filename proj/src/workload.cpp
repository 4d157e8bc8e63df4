#include "slosim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "slosim/csv.hpp"

namespace slosim {

namespace {

int sample_length(std::mt19937_64& rng, double mean, double std_dev) {
    std::normal_distribution<double> dist(mean, std_dev);
    double v = std_dev > 0.0 ? dist(rng) : mean;
    long rounded = std::lround(v);
    return static_cast<int>(std::max(1L, rounded));
}

}  // namespace

std::vector<Request> generate(const std::vector<TaskSpec>& tasks, int per_task_count,
                              double qps, std::uint64_t seed) {
    if (qps <= 0.0) throw std::invalid_argument("generate: qps must be > 0");
    if (per_task_count < 1) throw std::invalid_argument("generate: per_task_count must be >= 1");
    if (tasks.empty()) throw std::invalid_argument("generate: no tasks");

    std::mt19937_64 rng(seed);
    double shared_rate = qps / static_cast<double>(tasks.size());

    std::vector<Request> trace;
    trace.reserve(tasks.size() * static_cast<size_t>(per_task_count));
    for (const auto& task : tasks) {
        double rate = task.qps > 0.0 ? task.qps : shared_rate;
        std::exponential_distribution<double> gap(rate);
        double t = task.start_s;
        for (int i = 0; i < per_task_count; ++i) {
            t += gap(rng);
            Request r;
            r.task = task.name;
            r.arrival_s = t;
            r.ts.arrival = t;
            r.input_len = sample_length(rng, task.input_len_mean, task.input_len_std);
            r.output_len = sample_length(rng, task.output_len_mean, task.output_len_std);
            if (task.slo) r.slo = *task.slo;
            r.priority = task.priority;
            trace.push_back(std::move(r));
        }
    }
    std::stable_sort(trace.begin(), trace.end(),
                     [](const Request& a, const Request& b) { return a.arrival_s < b.arrival_s; });
    for (size_t i = 0; i < trace.size(); ++i) trace[i].id = static_cast<RequestId>(i);
    return trace;
}

std::map<std::string, std::vector<TaskSpec>> builtin_task_sets(bool priority_mode) {
    auto task = [priority_mode](const std::string& name, double ttft, double tpot, int prio,
                                double in_mean, double in_std, double out_mean, double out_std) {
        TaskSpec t;
        t.name = name;
        if (priority_mode)
            t.priority = prio;
        else
            t.slo = SloSpec{ttft, tpot};
        t.input_len_mean = in_mean;
        t.input_len_std = in_std;
        t.output_len_mean = out_mean;
        t.output_len_std = out_std;
        return t;
    };

    std::map<std::string, std::vector<TaskSpec>> sets;
    sets["4task"] = {
        task("medical_qa", 0.7, 0.5, 0, 32.57, 10.32, 38.92, 16.83),
        task("tldr_content_gen", 1.0, 0.7, 1, 44.38, 6.58, 96.04, 35.03),
        task("tldr_headline_gen", 2.0, 0.9, 2, 121.82, 35.04, 13.59, 6.55),
        task("wikisql", 20.0, 1.0, 3, 643.22, 337.01, 27.82, 4.84),
    };
    sets["2task"] = {
        task("gsm8k", 0.7, 0.2, 0, 51.44, 15.78, 90.13, 26.73),
        task("sharegpt", 2.0, 0.5, 1, 259.19, 324.88, 207.79, 234.99),
    };
    return sets;
}

std::vector<TaskSpec> builtin_task_set(const std::string& name, bool priority_mode) {
    auto sets = builtin_task_sets(priority_mode);
    auto it = sets.find(name);
    if (it == sets.end()) throw std::invalid_argument("unknown task set: " + name);
    return it->second;
}

std::string trace_to_csv(const std::vector<Request>& trace) {
    std::string out = "id,task,arrival_s,input_len,output_len,priority_or_ttft,tpot\n";
    for (const auto& r : trace) {
        std::string prio_or_ttft, tpot;
        if (r.priority) {
            prio_or_ttft = std::to_string(*r.priority);
        } else {
            prio_or_ttft = csv::format_double(r.slo.ttft_s);
            tpot = csv::format_double(r.slo.tpot_s);
        }
        out += csv::join({std::to_string(r.id), r.task, csv::format_double(r.arrival_s),
                          std::to_string(r.input_len), std::to_string(r.output_len), prio_or_ttft,
                          tpot});
        out += '\n';
    }
    return out;
}

std::vector<Request> trace_from_csv(const std::string& text) {
    std::vector<Request> trace;
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
        if (fields.size() != 7) throw std::invalid_argument("trace csv: bad row: " + line);
        Request r;
        r.id = csv::parse_int(fields[0]);
        r.task = fields[1];
        r.arrival_s = csv::parse_double(fields[2]);
        r.ts.arrival = r.arrival_s;
        r.input_len = static_cast<int>(csv::parse_int(fields[3]));
        r.output_len = static_cast<int>(csv::parse_int(fields[4]));
        if (fields[6].empty()) {
            r.priority = static_cast<int>(csv::parse_int(fields[5]));
        } else {
            r.slo.ttft_s = csv::parse_double(fields[5]);
            r.slo.tpot_s = csv::parse_double(fields[6]);
        }
        trace.push_back(std::move(r));
    }
    return trace;
}

}  // namespace slosim
