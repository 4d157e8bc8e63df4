#include "slosim/latency_model.hpp"

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <sstream>

#include "slosim/csv.hpp"
#include "json.hpp"

namespace slosim {

bool LatencyModel::valid() const {
    for (double v : {a, b, c, a_prime, b_prime, c_prime}) {
        if (!std::isfinite(v) || v < 0.0) return false;
    }
    return true;
}

double predict_prefill(const LatencyModel& model, std::span<const int> input_lengths) {
    if (input_lengths.empty()) throw std::invalid_argument("predict_prefill: empty batch");
    double sum = 0.0, sum_sq = 0.0;
    for (int len : input_lengths) {
        sum += len;
        sum_sq += static_cast<double>(len) * len;
    }
    return model.a + model.b * sum + model.c * sum_sq;
}

double predict_decode_step(const LatencyModel& model, std::span<const int> current_lengths) {
    if (current_lengths.empty()) throw std::invalid_argument("predict_decode_step: empty batch");
    double sum = 0.0;
    for (int len : current_lengths) sum += len;
    return model.a_prime + model.b_prime * sum +
           model.c_prime * static_cast<double>(current_lengths.size());
}

namespace {

// One weighted solve for a 3-parameter linear model. Rows are scaled by
// 1/obs so the residual being minimized is (pred - obs) / obs.
Eigen::Vector3d solve_relative_ls(const std::vector<std::array<double, 3>>& predictors,
                                  const std::vector<double>& observed,
                                  const std::string& phase) {
    const auto n = static_cast<Eigen::Index>(predictors.size());
    Eigen::MatrixXd design(n, 3);
    Eigen::VectorXd target(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double obs = observed[i];
        if (!(obs > 0.0)) throw FitError(phase, phase + " fit: nonpositive observation");
        for (int j = 0; j < 3; ++j) design(i, j) = predictors[i][j] / obs;
        target(i) = 1.0;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < 3) {
        throw FitError(phase, "fit underdetermined: " + phase +
                                  " samples are rank-deficient (need >= 3 independent samples)");
    }
    return qr.solve(target);
}

}  // namespace

FitResult fit_with_diagnostics(const std::vector<ProfileSample>& samples) {
    if (samples.size() < 3) {
        throw FitError("prefill", "fit underdetermined: need at least 3 samples, got " +
                                      std::to_string(samples.size()));
    }
    std::vector<std::array<double, 3>> pre_x, dec_x;
    std::vector<double> pre_y, dec_y;
    pre_x.reserve(samples.size());
    dec_x.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.batch_size != static_cast<int>(s.input_lengths.size()))
            throw std::invalid_argument("sample batch_size mismatches input_lengths");
        double sum = 0.0, sum_sq = 0.0;
        for (int len : s.input_lengths) {
            if (len < 1) throw std::invalid_argument("sample input length < 1");
            sum += len;
            sum_sq += static_cast<double>(len) * len;
        }
        pre_x.push_back({1.0, sum, sum_sq});
        pre_y.push_back(s.prefill_s);
        dec_x.push_back({1.0, sum, static_cast<double>(s.batch_size)});
        dec_y.push_back(s.decode_step_s);
    }

    Eigen::Vector3d pre = solve_relative_ls(pre_x, pre_y, "prefill");
    Eigen::Vector3d dec = solve_relative_ls(dec_x, dec_y, "decode");

    FitResult result;
    result.model = {pre(0), pre(1), pre(2), dec(0), dec(1), dec(2)};

    auto clamp = [&result](double& v, const char* name) {
        if (v < 0.0) {
            result.warnings.push_back(std::string("coefficient ") + name +
                                      " fitted negative; clamped to 0");
            v = 0.0;
        }
    };
    clamp(result.model.a, "a");
    clamp(result.model.b, "b");
    clamp(result.model.c, "c");
    clamp(result.model.a_prime, "a_prime");
    clamp(result.model.b_prime, "b_prime");
    clamp(result.model.c_prime, "c_prime");

    for (size_t i = 0; i < samples.size(); ++i) {
        double p = result.model.a + result.model.b * pre_x[i][1] + result.model.c * pre_x[i][2];
        double d = result.model.a_prime + result.model.b_prime * dec_x[i][1] +
                   result.model.c_prime * dec_x[i][2];
        result.max_rel_residual_prefill =
            std::max(result.max_rel_residual_prefill, std::abs(p - pre_y[i]) / pre_y[i]);
        result.max_rel_residual_decode =
            std::max(result.max_rel_residual_decode, std::abs(d - dec_y[i]) / dec_y[i]);
    }
    return result;
}

LatencyModel fit(const std::vector<ProfileSample>& samples) {
    return fit_with_diagnostics(samples).model;
}

std::vector<std::pair<int, int>> profiling_grid() {
    static const int batch_sizes[] = {1, 2, 4, 8, 16, 32, 64, 96, 128, 160, 192};
    static const int input_lengths[] = {4,   8,   16,  32,  48,   64,   96,  128,
                                        192, 256, 284, 512, 768, 1024, 1536, 2020};
    std::vector<std::pair<int, int>> grid;
    grid.reserve(std::size(batch_sizes) * std::size(input_lengths));
    for (int b : batch_sizes)
        for (int l : input_lengths) grid.emplace_back(b, l);
    return grid;
}

std::string samples_to_csv(const std::vector<ProfileSample>& samples) {
    std::string out = "batch_size,input_lengths(semicolon-separated),prefill_s,decode_step_s\n";
    for (const auto& s : samples) {
        std::string lens;
        for (size_t i = 0; i < s.input_lengths.size(); ++i) {
            if (i) lens += ';';
            lens += std::to_string(s.input_lengths[i]);
        }
        out += csv::join({std::to_string(s.batch_size), lens, csv::format_double(s.prefill_s),
                          csv::format_double(s.decode_step_s)});
        out += '\n';
    }
    return out;
}

std::vector<ProfileSample> samples_from_csv(const std::string& text) {
    std::vector<ProfileSample> samples;
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
        if (fields.size() != 4) throw std::invalid_argument("samples csv: bad row: " + line);
        ProfileSample s;
        s.batch_size = static_cast<int>(csv::parse_int(fields[0]));
        for (const auto& tok : csv::split(fields[1], ';'))
            s.input_lengths.push_back(static_cast<int>(csv::parse_int(tok)));
        s.prefill_s = csv::parse_double(fields[2]);
        s.decode_step_s = csv::parse_double(fields[3]);
        samples.push_back(std::move(s));
    }
    return samples;
}

std::string model_to_json(const LatencyModel& m) {
    nlohmann::json j{{"a", m.a},           {"b", m.b},           {"c", m.c},
                     {"a_prime", m.a_prime}, {"b_prime", m.b_prime}, {"c_prime", m.c_prime}};
    return j.dump(2) + "\n";
}

LatencyModel model_from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    LatencyModel m{j.at("a").get<double>(),       j.at("b").get<double>(),
                   j.at("c").get<double>(),       j.at("a_prime").get<double>(),
                   j.at("b_prime").get<double>(), j.at("c_prime").get<double>()};
    return m;
}

}  // namespace slosim
