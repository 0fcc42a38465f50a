#include "facefit/optim.hpp"

#include "facefit/parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace facefit {

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state shape mismatch");
    ++state.step;
    const double b1 = state.config.beta1;
    const double b2 = state.config.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= state.config.lr * m_hat / (std::sqrt(v_hat) + state.config.eps);
    }
}

std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::span<const double> x, double h) {
    std::vector<double> grad(x.size(), 0.0);
    parallel::for_each_index(static_cast<std::int64_t>(x.size()), [&](std::int64_t j) {
        std::vector<double> probe(x.begin(), x.end());
        probe[j] = x[j] + h;
        const double up = f(probe);
        probe[j] = x[j] - h;
        const double down = f(probe);
        grad[j] = (up - down) / (2.0 * h);
    });
    return grad;
}

} // namespace facefit
