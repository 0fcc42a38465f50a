#pragma once

#include "facefit/render.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace facefit {

enum class OcclusionShape { kRectangle, kEllipse, kPolygon };
enum class OcclusionColor { kSolidSeeded, kSolidExplicit, kPerPixelRandom };

struct OcclusionSpec {
    OcclusionShape shape = OcclusionShape::kRectangle;
    OcclusionColor color_mode = OcclusionColor::kSolidSeeded;
    std::array<double, 3> color{0.0, 0.0, 0.0}; // kSolidExplicit only
    double coverage = 0.3;                      // fraction of the face bbox, [0,1]
    std::optional<std::array<double, 2>> position; // center in pixels; seeded when absent
    std::uint64_t seed = 0;

    void validate() const;
};

enum class NoiseKind { kGaussian, kSaltPepper, kSpeckle };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::kGaussian;
    double sigma = 0.1; // gaussian / speckle
    double p = 0.05;    // salt_pepper
    std::uint64_t seed = 0;

    void validate() const;
};

/// One training/eval unit: a clean guiding image with occluded and noisy
/// counterparts. Synthetic datasets carry ground truth; real-image manifests
/// would leave the optionals empty.
struct TripletSample {
    Image guiding;
    Image occluded;
    Image noisy;
    std::vector<unsigned char> occlusion_mask;
    std::optional<CoeffVector> gt_coeffs;       // draw behind the degraded images
    std::optional<CoeffVector> gt_clean_coeffs; // draw behind the guiding image
    std::optional<LandmarkSet> gt_landmarks;    // of the guiding image
    OcclusionSpec occlusion;
    NoiseSpec noise;
    int identity = 0;
    int sample = 0;
};

/// Pixel-space bounding box, half-open.
struct FaceBBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long area() const { return static_cast<long>(width()) * height(); }
};

/// Tight bbox of the covered pixels; throws degenerate_render_error when the
/// frame covers nothing.
FaceBBox coverage_bbox(const RenderedFrame& frame);

struct OcclusionResult {
    Image image;
    std::vector<unsigned char> mask; // one byte per pixel
};

/// Paints one occluder into the image. Pixels outside the mask are copied
/// bit-exactly; the achieved mask area lands within 10% of
/// coverage * bbox area (exact zero when coverage is 0).
OcclusionResult overlay_occlusion(const Image& image, const FaceBBox& bbox,
                                  const OcclusionSpec& spec);

Image add_noise(const Image& image, const NoiseSpec& spec);

} // namespace facefit
