#include "facefit/kernels.hpp"

#include "facefit/parallel.hpp"

#include <cassert>
#include <cmath>
#include <vector>

namespace facefit::kernels {

namespace {

inline double dot_block(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double pixel_distance(const double* a, const double* b) {
    const double dr = a[0] - b[0];
    const double dg = a[1] - b[1];
    const double db = a[2] - b[2];
    return std::sqrt(dr * dr + dg * dg + db * db);
}

} // namespace

double dot_serial(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    const std::size_t blocks = (a.size() + kReduceBlock - 1) / kReduceBlock;
    double total = 0.0;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t lo = blk * kReduceBlock;
        const std::size_t n = std::min(kReduceBlock, a.size() - lo);
        total += dot_block(a.data() + lo, b.data() + lo, n);
    }
    return total;
}

double dot_parallel(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    const std::size_t blocks = (a.size() + kReduceBlock - 1) / kReduceBlock;
    if (blocks < 2) return dot_serial(a, b);
    std::vector<double> partial(blocks);
    parallel::for_each_index(static_cast<std::int64_t>(blocks), [&](std::int64_t blk) {
        const std::size_t lo = static_cast<std::size_t>(blk) * kReduceBlock;
        const std::size_t n = std::min(kReduceBlock, a.size() - lo);
        partial[static_cast<std::size_t>(blk)] = dot_block(a.data() + lo, b.data() + lo, n);
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double dot(std::span<const double> a, std::span<const double> b) {
    return parallel::enabled() ? dot_parallel(a, b) : dot_serial(a, b);
}

void add_scaled_serial(std::span<double> y, double alpha, std::span<const double> x) {
    assert(y.size() == x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

void add_scaled_parallel(std::span<double> y, double alpha, std::span<const double> x) {
    assert(y.size() == x.size());
    parallel::for_each_index(static_cast<std::int64_t>(y.size()),
                             [&](std::int64_t i) { y[i] += alpha * x[i]; });
}

void add_scaled(std::span<double> y, double alpha, std::span<const double> x) {
    if (parallel::enabled())
        add_scaled_parallel(y, alpha, x);
    else
        add_scaled_serial(y, alpha, x);
}

void affine_rows_serial(std::span<double> out, std::span<const double> base,
                        std::span<const double> weights, std::size_t stride,
                        std::span<const double> coeffs) {
    assert(out.size() == base.size());
    assert(coeffs.size() <= stride || stride == 0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = base[i];
        const double* w = weights.data() + i * stride;
        for (std::size_t k = 0; k < coeffs.size(); ++k) acc += w[k] * coeffs[k];
        out[i] = acc;
    }
}

void affine_rows_parallel(std::span<double> out, std::span<const double> base,
                          std::span<const double> weights, std::size_t stride,
                          std::span<const double> coeffs) {
    assert(out.size() == base.size());
    parallel::for_each_index(static_cast<std::int64_t>(out.size()), [&](std::int64_t i) {
        double acc = base[i];
        const double* w = weights.data() + static_cast<std::size_t>(i) * stride;
        for (std::size_t k = 0; k < coeffs.size(); ++k) acc += w[k] * coeffs[k];
        out[i] = acc;
    });
}

void affine_rows(std::span<double> out, std::span<const double> base,
                 std::span<const double> weights, std::size_t stride,
                 std::span<const double> coeffs) {
    if (parallel::enabled())
        affine_rows_parallel(out, base, weights, stride, coeffs);
    else
        affine_rows_serial(out, base, weights, stride, coeffs);
}

double masked_mean_distance_serial(std::span<const double> a, std::span<const double> b,
                                   std::span<const unsigned char> mask,
                                   std::size_t* covered_out) {
    assert(a.size() == b.size());
    assert(a.size() == 3 * mask.size());
    const std::size_t pixels = mask.size();
    const std::size_t blocks = (pixels + kReduceBlock - 1) / kReduceBlock;
    double total = 0.0;
    std::size_t covered = 0;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t lo = blk * kReduceBlock;
        const std::size_t hi = std::min(lo + kReduceBlock, pixels);
        double s = 0.0;
        for (std::size_t p = lo; p < hi; ++p) {
            if (!mask[p]) continue;
            s += pixel_distance(a.data() + 3 * p, b.data() + 3 * p);
            ++covered;
        }
        total += s;
    }
    if (covered_out) *covered_out = covered;
    return covered == 0 ? 0.0 : total / static_cast<double>(covered);
}

double masked_mean_distance_parallel(std::span<const double> a, std::span<const double> b,
                                     std::span<const unsigned char> mask,
                                     std::size_t* covered_out) {
    assert(a.size() == b.size());
    assert(a.size() == 3 * mask.size());
    const std::size_t pixels = mask.size();
    const std::size_t blocks = (pixels + kReduceBlock - 1) / kReduceBlock;
    if (blocks < 2) return masked_mean_distance_serial(a, b, mask, covered_out);
    std::vector<double> partial(blocks, 0.0);
    std::vector<std::size_t> counts(blocks, 0);
    parallel::for_each_index(static_cast<std::int64_t>(blocks), [&](std::int64_t blk) {
        const std::size_t lo = static_cast<std::size_t>(blk) * kReduceBlock;
        const std::size_t hi = std::min(lo + kReduceBlock, pixels);
        double s = 0.0;
        std::size_t c = 0;
        for (std::size_t p = lo; p < hi; ++p) {
            if (!mask[p]) continue;
            s += pixel_distance(a.data() + 3 * p, b.data() + 3 * p);
            ++c;
        }
        partial[static_cast<std::size_t>(blk)] = s;
        counts[static_cast<std::size_t>(blk)] = c;
    });
    double total = 0.0;
    std::size_t covered = 0;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        total += partial[blk];
        covered += counts[blk];
    }
    if (covered_out) *covered_out = covered;
    return covered == 0 ? 0.0 : total / static_cast<double>(covered);
}

double masked_mean_distance(std::span<const double> a, std::span<const double> b,
                            std::span<const unsigned char> mask,
                            std::size_t* covered_out) {
    return parallel::enabled() ? masked_mean_distance_parallel(a, b, mask, covered_out)
                               : masked_mean_distance_serial(a, b, mask, covered_out);
}

} // namespace facefit::kernels
