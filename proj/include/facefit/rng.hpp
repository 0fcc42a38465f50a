#pragma once

#include <cmath>
#include <cstdint>

namespace facefit {

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter), so samples can be generated in any order and
// from any thread without changing the result.

namespace detail {

constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

} // namespace detail

/// Combines a seed with a stream id into a new seed.
constexpr std::uint64_t substream(std::uint64_t seed, std::uint64_t stream) {
    return detail::mix64(seed ^ detail::mix64(stream + 0x632BE59BD9B4E019ull));
}

/// Uniform in [0,1) from (seed, counter).
inline double hash_uniform(std::uint64_t seed, std::uint64_t counter) {
    const std::uint64_t h = detail::mix64(seed ^ detail::mix64(counter));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Standard normal from (seed, counter) via Box-Muller.
inline double hash_normal(std::uint64_t seed, std::uint64_t counter) {
    double u1 = hash_uniform(seed, 2 * counter);
    const double u2 = hash_uniform(seed, 2 * counter + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

/// Small sequential generator for code that draws in a fixed order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal (Box-Muller, two fresh uniforms per call).
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t state_;
};

} // namespace facefit
