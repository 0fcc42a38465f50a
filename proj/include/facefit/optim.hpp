#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace facefit {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam accumulators for one parameter block.
struct AdamState {
    AdamConfig config;
    std::int64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    AdamState() = default;
    explicit AdamState(std::size_t n, AdamConfig cfg = {})
        : config(cfg), m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update, in place. Reference update order per
/// element: m, v, m_hat, v_hat, then p -= lr * m_hat / (sqrt(v_hat) + eps).
/// Throws std::invalid_argument on any shape mismatch.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

/// Central finite differences of f at x, one column per coordinate.
std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::span<const double> x, double h);

} // namespace facefit
