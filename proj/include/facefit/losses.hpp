#pragma once

#include "facefit/mm.hpp"
#include "facefit/render.hpp"
#include "facefit/tape.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace facefit {

/// Coefficient classifier: 257 -> 124 -> 2 fully-connected with a leaky
/// rectifier (slope 0.2) between the layers.
struct Discriminator {
    std::vector<double> w1; // 124 x 257, row-major
    std::vector<double> b1; // 124
    std::vector<double> w2; // 2 x 124, row-major
    std::vector<double> b2; // 2
    double leaky_slope = 0.2;

    static constexpr int kIn = coeff::kTotal;
    static constexpr int kHidden = 124;
    static constexpr int kOut = 2;

    static Discriminator zeros();
    static Discriminator seeded(std::uint64_t seed, double scale = 0.05);

    std::size_t param_count() const;
    void pack_params(std::span<double> out) const;   // w1, b1, w2, b2
    void unpack_params(std::span<const double> in);
};

/// One-hot targets for the consistency terms.
inline constexpr std::array<double, 2> kLabelGuiding{1.0, 0.0};
inline constexpr std::array<double, 2> kLabelRobust{0.0, 1.0};

struct Embedding {
    std::vector<double> values; // unit L2 norm
};

/// Mean over the 68 landmarks of the Euclidean point distance (pixels).
double landmark_loss(const LandmarkSet& predicted, const LandmarkSet& target);

/// Mean over covered pixels of per-pixel RGB Euclidean distance. Throws
/// degenerate_render_error when nothing is covered, std::invalid_argument on
/// a size mismatch.
double photometric_loss(const RenderedFrame& rendered, const Image& target);

/// 1 - cos(theta, theta_prime); arguments are normalized internally and a
/// zero-norm input throws std::invalid_argument.
double perceptual_loss(const Embedding& theta, const Embedding& theta_prime);

/// 0.5 r^2 inside |r| <= delta, delta*(|r| - delta/2) outside.
double huber(double residual, double delta);

std::array<double, 2> discriminator_forward(const Discriminator& disc, const CoeffVector& coeffs);

/// L_CO + L_CN where each branch sums huber(logit_k - label_k) over both of
/// its coefficient vectors (guiding with d_g, degraded with d_o / d_n).
double consistency_loss(const Discriminator& disc, const CoeffVector& c_g, const CoeffVector& c_o,
                        const CoeffVector& c_n, std::span<const double> d_g,
                        std::span<const double> d_o, std::span<const double> d_n, double delta);

double guide_total(double l_k, double l_gp, double l_p, double l_r, const LossWeights& w);
double robust_total(double l_o, double l_n, double l_c, const LossWeights& w);

// Tape-recorded forms of the same losses. Each mirrors the arithmetic of its
// plain counterpart; values agree to rounding and gradients flow to whatever
// inputs the recorded expressions reach.
namespace tapeops {

ad::Var landmark_loss(ad::Tape& tape, std::span<const ad::Var> landmark_xy,
                      const LandmarkSet& target);
ad::Var photometric_loss(ad::Tape& tape, const TapeFace& rendered, const Image& target);
ad::Var huber(const ad::Var& residual, double delta);

/// Forward with fixed discriminator weights; gradients reach the coefficient
/// vars. coeff_vars must be the contiguous 257 inputs.
std::array<ad::Var, 2> discriminator_forward(ad::Tape& tape, const Discriminator& disc,
                                             std::span<const ad::Var> coeff_vars);

/// Discriminator parameters bound as tape inputs, packed like pack_params.
struct DiscVars {
    std::vector<ad::Var> params;
    std::span<const ad::Var> w1() const { return {params.data(), Discriminator::kHidden * Discriminator::kIn}; }
    std::span<const ad::Var> b1() const { return {params.data() + Discriminator::kHidden * Discriminator::kIn, Discriminator::kHidden}; }
    std::span<const ad::Var> w2() const { return {params.data() + Discriminator::kHidden * Discriminator::kIn + Discriminator::kHidden, Discriminator::kOut * Discriminator::kHidden}; }
    std::span<const ad::Var> b2() const { return {params.data() + Discriminator::kHidden * Discriminator::kIn + Discriminator::kHidden + Discriminator::kOut * Discriminator::kHidden, Discriminator::kOut}; }
};

DiscVars bind_discriminator(ad::Tape& tape, const Discriminator& disc);

/// Forward with variable discriminator parameters and a fixed coefficient
/// vector (owned by the caller; must outlive the tape pass).
std::array<ad::Var, 2> discriminator_forward_params(ad::Tape& tape, const DiscVars& vars,
                                                    const Discriminator& disc,
                                                    const CoeffVector& coeffs);

ad::Var regularization_loss(ad::Tape& tape, std::span<const ad::Var> coeff_vars,
                            const LossWeights& w);

} // namespace tapeops

} // namespace facefit
