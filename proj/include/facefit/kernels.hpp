#pragma once

#include <cstddef>
#include <span>

namespace facefit::kernels {

// Hot numeric kernels, each in a serial reference form and an OpenMP form.
// The OpenMP forms are written so their floating point results are
// bit-identical to the serial ones for any thread count: element-wise maps
// touch disjoint outputs, and reductions accumulate fixed-size blocks that
// are always combined in block order.

/// Block length used by the deterministic reductions.
inline constexpr std::size_t kReduceBlock = 4096;

double dot_serial(std::span<const double> a, std::span<const double> b);
double dot_parallel(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);

void add_scaled_serial(std::span<double> y, double alpha, std::span<const double> x);
void add_scaled_parallel(std::span<double> y, double alpha, std::span<const double> x);
void add_scaled(std::span<double> y, double alpha, std::span<const double> x);

/// out[i] = base[i] + sum_k weights[i*stride + k] * coeffs[k], for i in [0, rows).
void affine_rows_serial(std::span<double> out, std::span<const double> base,
                        std::span<const double> weights, std::size_t stride,
                        std::span<const double> coeffs);
void affine_rows_parallel(std::span<double> out, std::span<const double> base,
                          std::span<const double> weights, std::size_t stride,
                          std::span<const double> coeffs);
void affine_rows(std::span<double> out, std::span<const double> base,
                 std::span<const double> weights, std::size_t stride,
                 std::span<const double> coeffs);

/// Mean over masked pixels of the per-pixel RGB Euclidean distance.
/// a and b are HxWx3 buffers; mask has one byte per pixel. Returns the count
/// of masked pixels through covered_out (0 means the mean is undefined and
/// 0.0 is returned).
double masked_mean_distance_serial(std::span<const double> a, std::span<const double> b,
                                   std::span<const unsigned char> mask,
                                   std::size_t* covered_out);
double masked_mean_distance_parallel(std::span<const double> a, std::span<const double> b,
                                     std::span<const unsigned char> mask,
                                     std::size_t* covered_out);
double masked_mean_distance(std::span<const double> a, std::span<const double> b,
                            std::span<const unsigned char> mask,
                            std::size_t* covered_out);

} // namespace facefit::kernels
