#include "slosim/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "slosim/workload.hpp"
#include "json.hpp"

namespace slosim {

using nlohmann::json;

const std::map<std::string, LatencyModel>& builtin_model_profiles() {
    static const std::map<std::string, LatencyModel> profiles = {
        {"qwen7b", {0.02, 2.0e-4, 1.0e-8, 0.015, 2.0e-6, 5.0e-4}},
        {"qwen32b", {0.03, 5.0e-4, 3.0e-8, 0.025, 5.0e-6, 1.2e-3}},
        {"llama70b", {0.05, 8.0e-4, 5.0e-8, 0.04, 8.0e-6, 2.0e-3}},
    };
    return profiles;
}

namespace {

int line_of(const std::string& text, std::size_t byte) {
    int line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

int line_of_key(const std::string& text, const std::string& key) {
    auto pos = text.find('"' + key + '"');
    return pos == std::string::npos ? 1 : line_of(text, pos);
}

void reject_unknown(const json& obj, const std::vector<std::string>& allowed,
                    const std::string& scope, const std::string& raw) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("line " + std::to_string(line_of_key(raw, key)) +
                              ": unknown key '" + key + "' in " + scope);
        }
    }
}

LatencyModel parse_coefficients(const json& j, const std::string& raw) {
    reject_unknown(j, {"a", "b", "c", "a_prime", "b_prime", "c_prime"}, "model_coefficients", raw);
    LatencyModel m;
    m.a = j.at("a").get<double>();
    m.b = j.at("b").get<double>();
    m.c = j.at("c").get<double>();
    m.a_prime = j.at("a_prime").get<double>();
    m.b_prime = j.at("b_prime").get<double>();
    m.c_prime = j.at("c_prime").get<double>();
    if (!m.valid()) throw ConfigError("model_coefficients must be finite and nonnegative");
    return m;
}

LatencyModel resolve_profile(const std::string& name, const json& root, const std::string& raw,
                             const char* coeff_key) {
    if (name == "custom") {
        if (!root.contains(coeff_key))
            throw ConfigError(std::string("profile 'custom' requires ") + coeff_key);
        return parse_coefficients(root.at(coeff_key), raw);
    }
    auto it = builtin_model_profiles().find(name);
    if (it == builtin_model_profiles().end())
        throw ConfigError("line " + std::to_string(line_of_key(raw, "model_profile")) +
                          ": unknown model profile '" + name + "'");
    return it->second;
}

TaskSpec parse_task(const json& j, bool priority_mode, const std::string& raw) {
    reject_unknown(j,
                   {"name", "ttft_s", "tpot_s", "priority", "input_len_mean", "input_len_std",
                    "output_len_mean", "output_len_std", "start_s", "qps"},
                   "task", raw);
    TaskSpec t;
    t.name = j.at("name").get<std::string>();
    if (priority_mode) {
        t.priority = j.at("priority").get<int>();
    } else {
        t.slo = SloSpec{j.at("ttft_s").get<double>(), j.at("tpot_s").get<double>()};
        if (t.slo->ttft_s <= 0 || t.slo->tpot_s <= 0)
            throw ConfigError("task '" + t.name + "': SLO targets must be > 0");
    }
    t.input_len_mean = j.at("input_len_mean").get<double>();
    t.input_len_std = j.value("input_len_std", 0.0);
    t.output_len_mean = j.at("output_len_mean").get<double>();
    t.output_len_std = j.value("output_len_std", 0.0);
    t.start_s = j.value("start_s", 0.0);
    t.qps = j.value("qps", 0.0);
    if (t.input_len_mean <= 0 || t.output_len_mean <= 0)
        throw ConfigError("task '" + t.name + "': length means must be > 0");
    if (t.input_len_std < 0 || t.output_len_std < 0)
        throw ConfigError("task '" + t.name + "': length stds must be >= 0");
    return t;
}

}  // namespace

RunConfig config_from_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("line " + std::to_string(line_of(text, e.byte)) +
                          ": JSON parse error: " + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");

    reject_unknown(root,
                   {"model_profile", "scheduler_model_profile", "model_coefficients",
                    "scheduler_model_coefficients", "mode", "dispatch_policy", "theta",
                    "util_weight", "sync_interval_s", "poll_interval_s", "max_token_budget",
                    "overdue_policy", "workers", "prefill_workers", "decode_workers",
                    "kv_capacity_tokens", "kv_admission_headroom", "kv_link",
                    "scheduler_overhead_s", "scaler", "workload", "priority", "max_sim_time_s",
                    "output_dir", "log_decode_steps"},
                   "config", text);

    RunConfig cfg;
    cfg.model_profile = root.value("model_profile", cfg.model_profile);
    cfg.oracle = resolve_profile(cfg.model_profile, root, text, "model_coefficients");
    cfg.scheduler_model_profile = root.value("scheduler_model_profile", std::string());
    cfg.estimate = cfg.scheduler_model_profile.empty()
                       ? cfg.oracle
                       : resolve_profile(cfg.scheduler_model_profile, root, text,
                                         "scheduler_model_coefficients");

    std::string mode = root.value("mode", "collocated");
    if (mode == "collocated")
        cfg.mode = ExecMode::collocated;
    else if (mode == "pd_disaggregated")
        cfg.mode = ExecMode::pd_disaggregated;
    else
        throw ConfigError("line " + std::to_string(line_of_key(text, "mode")) +
                          ": mode must be 'collocated' or 'pd_disaggregated'");

    std::string policy = root.value("dispatch_policy", "slo_aware");
    if (policy == "slo_aware")
        cfg.policy = DispatchPolicy::slo_aware;
    else if (policy == "round_robin")
        cfg.policy = DispatchPolicy::round_robin;
    else
        throw ConfigError("line " + std::to_string(line_of_key(text, "dispatch_policy")) +
                          ": dispatch_policy must be 'slo_aware' or 'round_robin'");

    cfg.dispatcher.theta = root.value("theta", cfg.dispatcher.theta);
    cfg.dispatcher.util_weight = root.value("util_weight", cfg.dispatcher.util_weight);
    cfg.dispatcher.sync_interval_s = root.value("sync_interval_s", cfg.dispatcher.sync_interval_s);
    cfg.dispatcher.poll_interval_s = root.value("poll_interval_s", cfg.dispatcher.poll_interval_s);
    cfg.dispatcher.max_token_budget =
        root.value("max_token_budget", cfg.dispatcher.max_token_budget);
    std::string overdue = root.value("overdue_policy", "serve");
    if (overdue == "serve")
        cfg.dispatcher.serve_overdue = true;
    else if (overdue == "starve")
        cfg.dispatcher.serve_overdue = false;
    else
        throw ConfigError("overdue_policy must be 'serve' or 'starve'");
    if (cfg.dispatcher.theta < 0 || cfg.dispatcher.theta > 1)
        throw ConfigError("theta must be in [0, 1]");
    if (cfg.dispatcher.sync_interval_s <= 0) throw ConfigError("sync_interval_s must be > 0");
    if (cfg.dispatcher.poll_interval_s <= 0) throw ConfigError("poll_interval_s must be > 0");

    cfg.workers = root.value("workers", cfg.workers);
    cfg.prefill_workers = root.value("prefill_workers", cfg.prefill_workers);
    cfg.decode_workers = root.value("decode_workers", cfg.decode_workers);
    if (cfg.workers < 1 || cfg.prefill_workers < 1 || cfg.decode_workers < 1)
        throw ConfigError("worker counts must be >= 1");

    cfg.kv_capacity_tokens = root.value("kv_capacity_tokens", cfg.kv_capacity_tokens);
    if (cfg.kv_capacity_tokens < 1) throw ConfigError("kv_capacity_tokens must be >= 1");
    cfg.kv_admission_headroom = root.value("kv_admission_headroom", cfg.kv_admission_headroom);
    if (cfg.kv_admission_headroom < 0 || cfg.kv_admission_headroom > 0.9)
        throw ConfigError("kv_admission_headroom must be in [0, 0.9]");
    if (root.contains("kv_link")) {
        const auto& link = root.at("kv_link");
        reject_unknown(link, {"base_s", "per_token_s"}, "kv_link", text);
        cfg.kv_link.base_latency_s = link.value("base_s", cfg.kv_link.base_latency_s);
        cfg.kv_link.per_token_s = link.value("per_token_s", cfg.kv_link.per_token_s);
        if (cfg.kv_link.base_latency_s < 0 || cfg.kv_link.per_token_s < 0)
            throw ConfigError("kv_link delays must be >= 0");
    }
    cfg.scheduler_overhead_s = root.value("scheduler_overhead_s", 0.0);

    if (root.contains("scaler")) {
        const auto& sc = root.at("scaler");
        reject_unknown(sc,
                       {"enabled", "tau_s", "eps_out", "eps_in", "min_workers", "max_workers",
                        "scale_in_patience", "provisioning_mode", "provisioning_delays",
                        "provisioning_delay_override_s", "fast_faults", "flip_divergence",
                        "flip_patience"},
                       "scaler", text);
        cfg.scaler.enabled = sc.value("enabled", false);
        cfg.scaler.tau_s = sc.value("tau_s", cfg.scaler.tau_s);
        cfg.scaler.eps_out = sc.value("eps_out", cfg.scaler.eps_out);
        cfg.scaler.eps_in = sc.value("eps_in", cfg.scaler.eps_in);
        cfg.scaler.min_workers = sc.value("min_workers", cfg.scaler.min_workers);
        cfg.scaler.max_workers = sc.value("max_workers", cfg.scaler.max_workers);
        cfg.scaler.scale_in_patience = sc.value("scale_in_patience", cfg.scaler.scale_in_patience);
        cfg.scaler.provisioning_mode = sc.value("provisioning_mode", cfg.scaler.provisioning_mode);
        if (sc.contains("provisioning_delays")) {
            for (const auto& [mode_name, table] : sc.at("provisioning_delays").items())
                for (const auto& [profile, delay] : table.items())
                    cfg.scaler.provisioning_delays[mode_name][profile] = delay.get<double>();
        }
        if (sc.contains("provisioning_delay_override_s"))
            cfg.scaler.provisioning_delay_override_s =
                sc.at("provisioning_delay_override_s").get<double>();
        if (sc.contains("fast_faults"))
            cfg.scaler.fast_faults = sc.at("fast_faults").get<std::vector<int>>();
        cfg.scaler.flip_divergence = sc.value("flip_divergence", cfg.scaler.flip_divergence);
        cfg.scaler.flip_patience = sc.value("flip_patience", cfg.scaler.flip_patience);
    }

    if (root.contains("workload")) {
        const auto& wl = root.at("workload");
        reject_unknown(wl, {"task_set", "priority_mode", "per_task_count", "qps", "seed", "tasks"},
                       "workload", text);
        cfg.workload.task_set = wl.value("task_set", cfg.workload.task_set);
        cfg.workload.priority_mode = wl.value("priority_mode", false);
        cfg.workload.per_task_count = wl.value("per_task_count", cfg.workload.per_task_count);
        cfg.workload.qps = wl.value("qps", cfg.workload.qps);
        cfg.workload.seed = wl.value("seed", cfg.workload.seed);
        if (wl.contains("tasks")) {
            if (cfg.workload.task_set != "custom")
                throw ConfigError("workload.tasks requires task_set = 'custom'");
            for (const auto& tj : wl.at("tasks"))
                cfg.workload.tasks.push_back(parse_task(tj, cfg.workload.priority_mode, text));
        }
    }
    if (cfg.workload.task_set == "custom") {
        if (cfg.workload.tasks.empty())
            throw ConfigError("task_set 'custom' requires a non-empty workload.tasks array");
    } else {
        cfg.workload.tasks = builtin_task_set(cfg.workload.task_set, cfg.workload.priority_mode);
    }
    if (cfg.workload.qps <= 0) throw ConfigError("workload.qps must be > 0");
    if (cfg.workload.per_task_count < 1) throw ConfigError("per_task_count must be >= 1");

    if (root.contains("priority")) {
        const auto& pr = root.at("priority");
        reject_unknown(pr, {"levels", "window_size", "bounds"}, "priority", text);
        cfg.priority.levels = pr.value("levels", cfg.priority.levels);
        cfg.priority.window_size = pr.value("window_size", cfg.priority.window_size);
        if (pr.contains("bounds")) {
            for (const auto& bj : pr.at("bounds")) {
                reject_unknown(bj, {"min_ttft", "max_ttft", "min_tpot", "max_tpot"},
                               "priority.bounds", text);
                cfg.priority.bounds.push_back(PriorityBounds{
                    bj.at("min_ttft").get<double>(), bj.at("max_ttft").get<double>(),
                    bj.at("min_tpot").get<double>(), bj.at("max_tpot").get<double>()});
            }
        }
    }
    if (cfg.workload.priority_mode) {
        if (cfg.priority.bounds.empty()) {
            if (cfg.workload.task_set == "custom")
                throw ConfigError("priority_mode with custom tasks requires priority.bounds");
            cfg.priority.bounds = default_priority_bounds(cfg.workload.task_set);
            cfg.priority.levels = static_cast<int>(cfg.priority.bounds.size());
        }
        if (static_cast<int>(cfg.priority.bounds.size()) != cfg.priority.levels)
            throw ConfigError("priority.bounds must have one entry per level");
        for (const auto& t : cfg.workload.tasks) {
            if (!t.priority || *t.priority < 0 || *t.priority >= cfg.priority.levels)
                throw ConfigError("task '" + t.name + "': priority out of [0, levels)");
        }
    }

    cfg.max_sim_time_s = root.value("max_sim_time_s", cfg.max_sim_time_s);
    if (cfg.max_sim_time_s <= 0) throw ConfigError("max_sim_time_s must be > 0");
    cfg.output_dir = root.value("output_dir", cfg.output_dir);
    cfg.log_decode_steps = root.value("log_decode_steps", false);

    if (cfg.scaler.enabled) {
        int initial = cfg.mode == ExecMode::collocated ? cfg.workers
                                                       : cfg.prefill_workers + cfg.decode_workers;
        if (cfg.scaler.max_workers < initial)
            throw ConfigError("scaler.max_workers must be >= initial worker count");
        if (cfg.scaler.min_workers > initial)
            throw ConfigError("scaler.min_workers must be <= initial worker count");
        // fail early if no delay is configured for this profile
        Scaler probe(cfg.scaler, cfg.model_profile);
        probe.provisioning_delay(false);
    }
    return cfg;
}

RunConfig config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return config_from_json(buf.str());
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    j["model_profile"] = cfg.model_profile;
    if (cfg.model_profile == "custom")
        j["model_coefficients"] = {{"a", cfg.oracle.a},
                                   {"b", cfg.oracle.b},
                                   {"c", cfg.oracle.c},
                                   {"a_prime", cfg.oracle.a_prime},
                                   {"b_prime", cfg.oracle.b_prime},
                                   {"c_prime", cfg.oracle.c_prime}};
    j["mode"] = cfg.mode == ExecMode::collocated ? "collocated" : "pd_disaggregated";
    j["dispatch_policy"] =
        cfg.policy == DispatchPolicy::slo_aware ? "slo_aware" : "round_robin";
    j["theta"] = cfg.dispatcher.theta;
    j["util_weight"] = cfg.dispatcher.util_weight;
    j["sync_interval_s"] = cfg.dispatcher.sync_interval_s;
    j["workers"] = cfg.workers;
    j["prefill_workers"] = cfg.prefill_workers;
    j["decode_workers"] = cfg.decode_workers;
    j["kv_capacity_tokens"] = cfg.kv_capacity_tokens;
    j["workload"] = {{"task_set", cfg.workload.task_set},
                     {"priority_mode", cfg.workload.priority_mode},
                     {"per_task_count", cfg.workload.per_task_count},
                     {"qps", cfg.workload.qps},
                     {"seed", cfg.workload.seed}};
    j["max_sim_time_s"] = cfg.max_sim_time_s;
    j["output_dir"] = cfg.output_dir;
    return j.dump(2) + "\n";
}

}  // namespace slosim
