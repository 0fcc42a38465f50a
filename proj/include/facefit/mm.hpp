#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace facefit {

// Coefficient vector layout. One face instance is a 257-vector split into
// shape / expression / texture / illumination / pose segments.
namespace coeff {
inline constexpr int kShapeOffset = 0;
inline constexpr int kShapeSize = 80;
inline constexpr int kExprOffset = 80;
inline constexpr int kExprSize = 64;
inline constexpr int kTexOffset = 144;
inline constexpr int kTexSize = 80;
inline constexpr int kIllumOffset = 224;
inline constexpr int kIllumSize = 27; // 9 SH bands x 3 channels, channel-major
inline constexpr int kPoseOffset = 251;
inline constexpr int kPoseSize = 6; // rx, ry, rz (radians), tx, ty, tz
inline constexpr int kTotal = 257;
} // namespace coeff

struct CoeffVector {
    std::array<double, coeff::kTotal> values{};

    std::span<double> shape() { return {values.data() + coeff::kShapeOffset, coeff::kShapeSize}; }
    std::span<double> expression() { return {values.data() + coeff::kExprOffset, coeff::kExprSize}; }
    std::span<double> texture() { return {values.data() + coeff::kTexOffset, coeff::kTexSize}; }
    std::span<double> illumination() { return {values.data() + coeff::kIllumOffset, coeff::kIllumSize}; }
    std::span<double> pose() { return {values.data() + coeff::kPoseOffset, coeff::kPoseSize}; }

    std::span<const double> shape() const { return {values.data() + coeff::kShapeOffset, coeff::kShapeSize}; }
    std::span<const double> expression() const { return {values.data() + coeff::kExprOffset, coeff::kExprSize}; }
    std::span<const double> texture() const { return {values.data() + coeff::kTexOffset, coeff::kTexSize}; }
    std::span<const double> illumination() const { return {values.data() + coeff::kIllumOffset, coeff::kIllumSize}; }
    std::span<const double> pose() const { return {values.data() + coeff::kPoseOffset, coeff::kPoseSize}; }

    bool finite() const;
};

/// Per-term loss weights. Defaults follow the fitted configuration the
/// pipelines use; see pipeline.hpp for where each one enters.
struct LossWeights {
    double alpha_k = 1.6e-3;  // landmark
    double alpha_gp = 1.92;   // guiding photometric
    double alpha_p = 0.2;     // perceptual
    double alpha_r = 3e-4;    // regularization
    double beta_o = 1.92;     // occlusion-resistive photometric
    double beta_n = 1.92;     // noise-resistive photometric
    double beta_c = 1e-3;     // consistency
    double w_s = 1.0;         // shape prior
    double w_t = 1.7e-3;      // texture prior
    double w_e = 0.8;         // expression prior
    double huber_delta = 1.0;

    void validate() const; // throws std::invalid_argument on negative/non-finite
};

/// Linear face model: mean geometry/texture plus PCA-style bases.
/// Immutable after construction; safe to share across threads.
struct MorphableBasis {
    std::uint32_t vertex_count = 0;
    std::vector<double> mean_geometry;    // 3N, model units
    std::vector<double> mean_texture;     // 3N, albedo in [0,1]
    std::vector<double> shape_basis;      // 3N x 80, column-major
    std::vector<double> expression_basis; // 3N x 64, column-major
    std::vector<double> texture_basis;    // 3N x 80, column-major
    std::vector<std::array<std::uint32_t, 3>> triangles;
    std::array<std::uint32_t, 68> landmark_indices{};
    std::uint64_t basis_seed = 0;

    // Derived, rebuilt by finalize(). geometry_rows packs the shape and
    // expression rows back to back so a morph row is one contiguous dot
    // against coefficients [0,144).
    std::vector<double> geometry_rows; // 3N x 144, row-major
    std::vector<double> texture_rows;  // 3N x 80, row-major
    std::vector<std::uint32_t> vertex_face_offsets; // CSR vertex -> incident faces
    std::vector<std::uint32_t> vertex_face_ids;

    /// Rebuilds the derived members and checks the structural invariants
    /// (index bounds, texture range). Throws std::invalid_argument.
    void finalize();
};

/// Builds a deterministic synthetic basis: a smooth ellipsoidal face patch,
/// orthonormal smooth perturbation fields for the three bases, and 68
/// landmark vertices. vertex_count must be >= 68.
MorphableBasis generate_synthetic_basis(std::uint32_t vertex_count, std::uint64_t seed);

/// mean_geometry + B_s * s + B_e * e
std::vector<double> morph_geometry(const MorphableBasis& basis, const CoeffVector& coeffs);

/// mean_texture + B_t * t (unclamped; render clamps)
std::vector<double> morph_texture(const MorphableBasis& basis, const CoeffVector& coeffs);

/// w_s*|s|^2 + w_t*|t|^2 + w_e*|e|^2
double regularization_loss(const CoeffVector& coeffs, const LossWeights& weights);

} // namespace facefit
