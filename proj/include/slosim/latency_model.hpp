#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace slosim {

// Batch latency model. Prefill time for a batch is
//   a + b * sum(len) + c * sum(len^2)
// and one decode iteration over a batch of B requests costs
//   a' + b' * sum(current_len) + c' * B.
// The same model doubles as the simulator's execution oracle and the
// scheduler's predictor; the two may be configured independently.
struct LatencyModel {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double a_prime = 0.0;
    double b_prime = 0.0;
    double c_prime = 0.0;

    // All coefficients finite and nonnegative (latency nondecreasing in load).
    bool valid() const;
};

struct ProfileSample {
    int batch_size = 0;
    std::vector<int> input_lengths;
    double prefill_s = 0.0;
    double decode_step_s = 0.0;
};

class FitError : public std::runtime_error {
public:
    FitError(std::string phase_, const std::string& msg)
        : std::runtime_error(msg), phase(std::move(phase_)) {}
    std::string phase;  // "prefill" or "decode"
};

struct FitResult {
    LatencyModel model;
    double max_rel_residual_prefill = 0.0;
    double max_rel_residual_decode = 0.0;
    std::vector<std::string> warnings;  // e.g. negative coefficients clamped
};

double predict_prefill(const LatencyModel& model, std::span<const int> input_lengths);
double predict_decode_step(const LatencyModel& model, std::span<const int> current_lengths);

// Weighted linear least squares minimizing sum(((pred - obs) / obs)^2),
// solved with weights 1/obs^2. Prefill and decode are fitted independently
// from the same sample records. Negative coefficients are clamped to zero
// and a warning recorded.
FitResult fit_with_diagnostics(const std::vector<ProfileSample>& samples);
LatencyModel fit(const std::vector<ProfileSample>& samples);

// The profiling grid: every (batch_size, input_length) combination used to
// drive sample collection.
std::vector<std::pair<int, int>> profiling_grid();

// CSV round-trip, header:
//   batch_size,input_lengths(semicolon-separated),prefill_s,decode_step_s
std::string samples_to_csv(const std::vector<ProfileSample>& samples);
std::vector<ProfileSample> samples_from_csv(const std::string& text);

std::string model_to_json(const LatencyModel& model);
LatencyModel model_from_json(const std::string& text);

}  // namespace slosim
