#pragma once

#include "facefit/mm.hpp"
#include "facefit/tape.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace facefit {

struct Camera {
    double focal = 64.0; // pixels
    double cx = 32.0;
    double cy = 32.0;
    int width = 64;
    int height = 64;

    void validate() const; // throws std::invalid_argument
};

/// Row-major RGB raster with channels interleaved, values in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data; // 3 * width * height

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(3) * w * h, fill) {}

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

struct RenderedFrame {
    Image rgb;
    std::vector<unsigned char> coverage; // one byte per pixel
    std::vector<double> depth;           // +inf where uncovered

    std::size_t covered_count() const;
};

struct LandmarkSet {
    std::array<std::array<double, 2>, 68> points{};
};

struct ProjectedVertex {
    double x = 0.0;
    double y = 0.0;
    double depth = 0.0;
    bool clipped = false;
};

/// Vertices with camera-space depth below this are clipped; triangles that
/// reference a clipped vertex are dropped.
inline constexpr double kNearEpsilon = 1e-4;

/// Real spherical harmonics, first three bands, evaluated at a direction.
void sh_basis(double nx, double ny, double nz, std::span<double> out9);

/// Per-channel SH irradiance times albedo, clamped to [0,1]. gamma is 27
/// values laid out channel-major (9 bands for R, then G, then B); normal must
/// be unit length within 1e-6 or std::invalid_argument is thrown.
std::array<double, 3> sh_shade(std::span<const double> normal, std::span<const double> albedo,
                               std::span<const double> gamma);

/// Euler XYZ rotation (R = Rx * Ry * Rz) then translation, then pinhole
/// projection x = f*X/Z + cx, y = f*Y/Z + cy with camera-space Z as depth.
std::vector<ProjectedVertex> project_vertices(std::span<const double> geometry,
                                              std::span<const double> pose,
                                              const Camera& camera);

/// Area-weighted vertex normals (unit length) of the morphed geometry.
std::vector<double> vertex_normals(const MorphableBasis& basis, std::span<const double> geometry);

/// Z-buffered rasterization with perspective-correct vertex color
/// interpolation. Pixel centers sample at (i+0.5, j+0.5); boundary ties follow
/// the top-left rule; equal depths keep the lower triangle id. Degenerate and
/// clipped triangles contribute nothing. If tri_ids_out is non-null it
/// receives the winning triangle per pixel (-1 where uncovered).
RenderedFrame rasterize(std::span<const ProjectedVertex> vertices,
                        std::span<const std::array<std::uint32_t, 3>> triangles,
                        std::span<const double> vertex_colors, int width, int height,
                        std::vector<std::int32_t>* tri_ids_out = nullptr);

/// Full forward render: morph, shade, project, rasterize, composite over the
/// background (black if none). Throws std::invalid_argument on a background
/// size mismatch. tri_ids_out, when given, receives the per-pixel winning
/// triangle (-1 uncovered); gradient checks use it to detect perturbations
/// that change the frozen pixel-to-triangle assignment.
RenderedFrame render_face(const MorphableBasis& basis, const CoeffVector& coeffs,
                          const Camera& camera, const Image* background = nullptr,
                          std::vector<std::int32_t>* tri_ids_out = nullptr);

/// Projected positions of the 68 landmark vertices. Throws
/// degenerate_render_error naming the first clipped landmark.
LandmarkSet project_landmarks(const MorphableBasis& basis, const CoeffVector& coeffs,
                              const Camera& camera);

// ---- Tape-recorded render -------------------------------------------------
//
// Records the same arithmetic as render_face against coefficient Vars so a
// loss on the result differentiates back to the coefficients. Coverage and
// the per-pixel winning triangle are decided on the forward values and frozen
// for the recording; gradients flow through barycentric weights, shading and
// projection.

struct TapeFace {
    RenderedFrame frame;                     // forward values, composited
    std::vector<std::int32_t> tri_ids;       // per pixel, -1 uncovered
    std::vector<std::uint32_t> covered;      // covered pixel indices, row-major order
    std::vector<ad::Var> pixel_rgb;          // 3 Vars per covered pixel
    std::vector<ad::Var> landmark_xy;        // 2 Vars per landmark (x, y)
};

/// coeff_vars must be the 257 coefficient inputs bound contiguously on tape.
TapeFace render_face_tape(ad::Tape& tape, const MorphableBasis& basis,
                          std::span<const ad::Var> coeff_vars, const Camera& camera,
                          const Image* background = nullptr);

} // namespace facefit
