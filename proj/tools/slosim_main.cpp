// slosim: discrete-event simulator for SLO-aware LLM serving policies.
//
// Subcommands: run (one simulation), sweep (qps x seed x policy grid),
// fit (latency model regression from profiler samples), compare (diff two
// summary reports).

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "slosim/config.hpp"
#include "slosim/csv.hpp"
#include "slosim/latency_model.hpp"
#include "slosim/metrics.hpp"
#include "slosim/sim_engine.hpp"
#include "slosim/workload.hpp"

namespace fs = std::filesystem;
using namespace slosim;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStall = 3;

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path resolve_out_dir(const RunConfig& cfg, const std::string& flag_out) {
    if (!flag_out.empty()) return flag_out;
    if (const char* env = std::getenv("SLOSIM_OUT_DIR"); env && *env) return env;
    return cfg.output_dir;
}

void apply_overrides(RunConfig& cfg, const std::string& policy, const std::string& mode,
                     double qps, long long seed) {
    if (!policy.empty()) {
        if (policy == "slo_aware")
            cfg.policy = DispatchPolicy::slo_aware;
        else if (policy == "round_robin")
            cfg.policy = DispatchPolicy::round_robin;
        else
            throw ConfigError("unknown policy override: " + policy);
    }
    if (!mode.empty()) {
        if (mode == "collocated")
            cfg.mode = ExecMode::collocated;
        else if (mode == "pd_disaggregated")
            cfg.mode = ExecMode::pd_disaggregated;
        else
            throw ConfigError("unknown mode override: " + mode);
    }
    if (qps > 0) cfg.workload.qps = qps;
    if (seed >= 0) cfg.workload.seed = static_cast<std::uint64_t>(seed);
}

int write_run_artifacts(const SimResult& res, const fs::path& dir) {
    fs::create_directories(dir);
    write_file(dir / "events.csv", events_to_csv(res.events));
    write_file(dir / "requests.csv", outcomes_to_csv(res.outcomes));
    write_file(dir / "summary.json", report_to_json(res.report));
    if (res.stalled) {
        std::cerr << "simulation stalled (" << res.stall_reason << "); "
                  << res.stuck_requests.size() << " request(s) pending";
        if (!res.stuck_requests.empty()) {
            std::cerr << ", first ids:";
            for (size_t i = 0; i < res.stuck_requests.size() && i < 8; ++i)
                std::cerr << ' ' << res.stuck_requests[i];
        }
        std::cerr << '\n';
        return kExitStall;
    }
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_flag,
            const std::string& policy, const std::string& mode, double qps, long long seed,
            const std::string& trace_path, bool save_trace) {
    RunConfig cfg = config_from_file(config_path);
    apply_overrides(cfg, policy, mode, qps, seed);
    fs::path dir = resolve_out_dir(cfg, out_flag);

    std::vector<Request> trace;
    if (!trace_path.empty()) {
        trace = trace_from_csv(read_file(trace_path));
    } else {
        trace = generate(cfg.workload.tasks, cfg.workload.per_task_count, cfg.workload.qps,
                         cfg.workload.seed);
    }
    if (save_trace) {
        fs::create_directories(dir);
        write_file(dir / "trace.csv", trace_to_csv(trace));
    }

    Simulation sim(cfg, std::move(trace));
    SimResult res = sim.run();
    int rc = write_run_artifacts(res, dir);
    std::cout << "requests=" << res.outcomes.size() << " attainment=" << res.report.attainment
              << " cost_units=" << res.report.cost_units << " p99_e2e_s=" << res.report.p99_e2e_s
              << " out=" << dir.string() << '\n';
    return rc;
}

struct SweepCell {
    double qps;
    std::uint64_t seed;
    DispatchPolicy policy;
};

std::string policy_name(DispatchPolicy p) {
    return p == DispatchPolicy::slo_aware ? "slo_aware" : "round_robin";
}

int cmd_sweep(const std::string& config_path, const std::string& out_flag,
              std::vector<double> qps_list, std::vector<long long> seeds,
              std::vector<std::string> policies, int jobs) {
    RunConfig base = config_from_file(config_path);
    fs::path dir = resolve_out_dir(base, out_flag);
    fs::create_directories(dir);
    if (qps_list.empty() || seeds.empty()) throw ConfigError("sweep needs --qps and --seeds");
    if (policies.empty()) policies = {"slo_aware", "round_robin"};

    std::vector<SweepCell> cells;
    for (double q : qps_list)
        for (long long s : seeds)
            for (const auto& p : policies) {
                SweepCell c{q, static_cast<std::uint64_t>(s),
                            p == "slo_aware" ? DispatchPolicy::slo_aware
                                             : DispatchPolicy::round_robin};
                if (p != "slo_aware" && p != "round_robin")
                    throw ConfigError("unknown policy in --policies: " + p);
                cells.push_back(c);
            }

    auto run_cell = [&base](const SweepCell& c) {
        RunConfig cfg = base;
        cfg.workload.qps = c.qps;
        cfg.workload.seed = c.seed;
        cfg.policy = c.policy;
        return run_simulation(cfg);
    };

    if (jobs < 1) jobs = 1;
    std::vector<SimResult> results(cells.size());
    std::vector<bool> failed(cells.size(), false);
    for (std::size_t start = 0; start < cells.size(); start += jobs) {
        std::size_t end = std::min(cells.size(), start + jobs);
        std::vector<std::future<SimResult>> futs;
        for (std::size_t i = start; i < end; ++i)
            futs.push_back(std::async(std::launch::async, run_cell, cells[i]));
        for (std::size_t i = start; i < end; ++i) {
            results[i] = futs[i - start].get();
            failed[i] = results[i].stalled;
        }
        bool any_failed = false;
        for (std::size_t i = start; i < end; ++i) any_failed |= failed[i];
        if (any_failed) {
            // preserve what finished so far, then abort
            for (std::size_t i = end; i < cells.size(); ++i) failed[i] = true;
            break;
        }
    }

    std::string rows = "qps,seed,policy,attainment,cost_units,p50,p95,p99\n";
    bool aborted = false;
    std::size_t done = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (failed[i] && results[i].outcomes.empty()) {
            aborted = true;
            continue;
        }
        if (failed[i]) aborted = true;
        const auto& rep = results[i].report;
        rows += csv::join({csv::format_double(cells[i].qps), std::to_string(cells[i].seed),
                           policy_name(cells[i].policy), csv::format_double(rep.attainment),
                           std::to_string(rep.cost_units), csv::format_double(rep.p50_e2e_s),
                           csv::format_double(rep.p95_e2e_s), csv::format_double(rep.p99_e2e_s)});
        rows += '\n';
        ++done;
    }
    write_file(dir / "sweep.csv", rows);

    // aggregate mean and population std per (qps, policy) over seeds
    std::string agg =
        "qps,policy,attainment_mean,attainment_std,cost_units_mean,cost_units_std,p50_mean,"
        "p50_std,p95_mean,p95_std,p99_mean,p99_std\n";
    for (double q : qps_list) {
        for (const auto& p : policies) {
            std::vector<const RunReport*> reps;
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (cells[i].qps == q && policy_name(cells[i].policy) == p && !failed[i])
                    reps.push_back(&results[i].report);
            }
            if (reps.empty()) continue;
            auto stat = [&reps](auto getter) {
                double mean = 0.0;
                for (auto* r : reps) mean += getter(*r);
                mean /= reps.size();
                double var = 0.0;
                for (auto* r : reps) {
                    double d = getter(*r) - mean;
                    var += d * d;
                }
                return std::pair<double, double>(mean, std::sqrt(var / reps.size()));
            };
            auto [am, as] = stat([](const RunReport& r) { return r.attainment; });
            auto [cm, cs] = stat([](const RunReport& r) { return double(r.cost_units); });
            auto [p50m, p50s] = stat([](const RunReport& r) { return r.p50_e2e_s; });
            auto [p95m, p95s] = stat([](const RunReport& r) { return r.p95_e2e_s; });
            auto [p99m, p99s] = stat([](const RunReport& r) { return r.p99_e2e_s; });
            agg += csv::join({csv::format_double(q), p, csv::format_double(am),
                              csv::format_double(as), csv::format_double(cm),
                              csv::format_double(cs), csv::format_double(p50m),
                              csv::format_double(p50s), csv::format_double(p95m),
                              csv::format_double(p95s), csv::format_double(p99m),
                              csv::format_double(p99s)});
            agg += '\n';
        }
    }
    write_file(dir / "sweep_agg.csv", agg);

    std::cout << "sweep cells completed: " << done << "/" << cells.size() << " -> "
              << (dir / "sweep.csv").string() << '\n';
    if (aborted) {
        std::cerr << "sweep aborted: at least one run stalled; partial results preserved\n";
        return kExitStall;
    }
    return 0;
}

int cmd_fit(const std::string& samples_path, const std::string& out_path) {
    auto samples = samples_from_csv(read_file(samples_path));
    FitResult result = fit_with_diagnostics(samples);
    nlohmann::json j = nlohmann::json::parse(model_to_json(result.model));
    j["max_rel_residual_prefill"] = result.max_rel_residual_prefill;
    j["max_rel_residual_decode"] = result.max_rel_residual_decode;
    j["warnings"] = result.warnings;
    write_file(out_path, j.dump(2) + "\n");
    std::cout << "fitted " << samples.size() << " samples -> " << out_path
              << " (max rel residual prefill=" << result.max_rel_residual_prefill
              << ", decode=" << result.max_rel_residual_decode << ")\n";
    return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path) {
    auto a = nlohmann::json::parse(read_file(a_path));
    auto b = nlohmann::json::parse(read_file(b_path));
    std::cout << "metric,a,b,delta\n";
    for (const auto& key :
         {"attainment", "cost_units", "cost_seconds", "p50_e2e_s", "p95_e2e_s", "p99_e2e_s"}) {
        if (!a.contains(key) || !b.contains(key)) continue;
        if (a[key].is_null() || b[key].is_null()) continue;
        double av = a[key].get<double>();
        double bv = b[key].get<double>();
        std::cout << key << ',' << av << ',' << bv << ',' << (bv - av) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"slosim: SLO-aware LLM serving simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir, policy, mode, trace_path;
    double qps = -1;
    long long seed = -1;
    bool save_trace = false;

    auto* run = app.add_subcommand("run", "run one simulation from a config file");
    run->add_option("--config", config_path, "config JSON path")->required();
    run->add_option("--out", out_dir, "output directory (overrides config and SLOSIM_OUT_DIR)");
    run->add_option("--policy", policy, "dispatch policy override");
    run->add_option("--mode", mode, "execution mode override");
    run->add_option("--qps", qps, "workload qps override");
    run->add_option("--seed", seed, "workload seed override");
    run->add_option("--trace", trace_path, "run a saved trace CSV instead of generating");
    run->add_flag("--save-trace", save_trace, "write the generated trace to the output dir");

    std::vector<double> sweep_qps;
    std::vector<long long> sweep_seeds;
    std::vector<std::string> sweep_policies;
    int jobs = static_cast<int>(std::thread::hardware_concurrency());
    auto* sweep = app.add_subcommand("sweep", "run a qps x seed x policy grid");
    sweep->add_option("--config", config_path, "config JSON path")->required();
    sweep->add_option("--out", out_dir, "output directory");
    sweep->add_option("--qps", sweep_qps, "qps values")->delimiter(',')->required();
    sweep->add_option("--seeds", sweep_seeds, "seeds")->delimiter(',')->required();
    sweep->add_option("--policies", sweep_policies, "policies (default: both)")->delimiter(',');
    sweep->add_option("--jobs", jobs, "parallel cells");

    std::string samples_path, model_out = "model.json";
    auto* fit_cmd = app.add_subcommand("fit", "fit latency model coefficients from samples");
    fit_cmd->add_option("--samples", samples_path, "profiler samples CSV")->required();
    fit_cmd->add_option("--out", model_out, "output model JSON path");

    std::string cmp_a, cmp_b;
    auto* cmp = app.add_subcommand("compare", "diff two summary.json reports");
    cmp->add_option("a", cmp_a, "first summary.json")->required();
    cmp->add_option("b", cmp_b, "second summary.json")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(config_path, out_dir, policy, mode, qps, seed, trace_path, save_trace);
        if (sweep->parsed())
            return cmd_sweep(config_path, out_dir, sweep_qps, sweep_seeds, sweep_policies, jobs);
        if (fit_cmd->parsed()) return cmd_fit(samples_path, model_out);
        if (cmp->parsed()) return cmd_compare(cmp_a, cmp_b);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const FitError& e) {
        std::cerr << "fit error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const StallError& e) {
        std::cerr << "simulation error: " << e.what() << '\n';
        return kExitStall;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
