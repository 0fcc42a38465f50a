#include "facefit/degrade.hpp"

#include "facefit/errors.hpp"
#include "facefit/parallel.hpp"
#include "facefit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace facefit {

void OcclusionSpec::validate() const {
    if (!(coverage >= 0.0 && coverage <= 1.0))
        throw std::invalid_argument("occlusion coverage must be in [0,1]");
    for (double c : color)
        if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("occlusion color outside [0,1]");
}

void NoiseSpec::validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be nonnegative");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("salt/pepper p must be in [0,1]");
}

FaceBBox coverage_bbox(const RenderedFrame& frame) {
    FaceBBox box{frame.rgb.width, frame.rgb.height, 0, 0};
    bool any = false;
    for (int y = 0; y < frame.rgb.height; ++y)
        for (int x = 0; x < frame.rgb.width; ++x)
            if (frame.coverage[static_cast<std::size_t>(y) * frame.rgb.width + x]) {
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x + 1);
                box.y1 = std::max(box.y1, y + 1);
                any = true;
            }
    if (!any) throw degenerate_render_error("coverage_bbox: frame covers no pixels");
    return box;
}

namespace {

struct Poly {
    std::vector<double> xs, ys; // closed implicitly
};

bool point_in_polygon(const Poly& poly, double px, double py) {
    // Even-odd crossing test.
    bool inside = false;
    const std::size_t n = poly.xs.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = poly.xs[i], yi = poly.ys[i];
        const double xj = poly.xs[j], yj = poly.ys[j];
        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
    }
    return inside;
}

long paint_rectangle(std::vector<unsigned char>& mask, int img_w, int img_h, double cx, double cy,
                     double half_w, double half_h) {
    const int x0 = std::max(0, static_cast<int>(std::ceil(cx - half_w - 0.5)));
    const int x1 = std::min(img_w - 1, static_cast<int>(std::floor(cx + half_w - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(cy - half_h - 0.5)));
    const int y1 = std::min(img_h - 1, static_cast<int>(std::floor(cy + half_h - 0.5)));
    long count = 0;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            mask[static_cast<std::size_t>(y) * img_w + x] = 1;
            ++count;
        }
    return count;
}

long paint_ellipse(std::vector<unsigned char>& mask, int img_w, int img_h, double cx, double cy,
                   double a, double b) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - a)));
    const int x1 = std::min(img_w - 1, static_cast<int>(std::ceil(cx + a)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - b)));
    const int y1 = std::min(img_h - 1, static_cast<int>(std::ceil(cy + b)));
    long count = 0;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = (x + 0.5 - cx) / a;
            const double dy = (y + 0.5 - cy) / b;
            if (dx * dx + dy * dy <= 1.0) {
                mask[static_cast<std::size_t>(y) * img_w + x] = 1;
                ++count;
            }
        }
    return count;
}

long paint_polygon(std::vector<unsigned char>& mask, int img_w, int img_h, const Poly& poly) {
    double xmin = poly.xs[0], xmax = poly.xs[0], ymin = poly.ys[0], ymax = poly.ys[0];
    for (std::size_t i = 1; i < poly.xs.size(); ++i) {
        xmin = std::min(xmin, poly.xs[i]);
        xmax = std::max(xmax, poly.xs[i]);
        ymin = std::min(ymin, poly.ys[i]);
        ymax = std::max(ymax, poly.ys[i]);
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(xmin)));
    const int x1 = std::min(img_w - 1, static_cast<int>(std::ceil(xmax)));
    const int y0 = std::max(0, static_cast<int>(std::floor(ymin)));
    const int y1 = std::min(img_h - 1, static_cast<int>(std::ceil(ymax)));
    long count = 0;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (point_in_polygon(poly, x + 0.5, y + 0.5)) {
                mask[static_cast<std::size_t>(y) * img_w + x] = 1;
                ++count;
            }
    return count;
}

} // namespace

OcclusionResult overlay_occlusion(const Image& image, const FaceBBox& bbox,
                                  const OcclusionSpec& spec) {
    spec.validate();
    if (bbox.x0 < 0 || bbox.y0 < 0 || bbox.x1 > image.width || bbox.y1 > image.height ||
        bbox.width() <= 0 || bbox.height() <= 0)
        throw std::invalid_argument("overlay_occlusion: bbox outside image");

    OcclusionResult out;
    out.image = image;
    out.mask.assign(image.pixel_count(), 0);

    const long target = std::lround(spec.coverage * static_cast<double>(bbox.area()));
    if (target <= 0) return out;

    Rng rng(substream(spec.seed, 0x0CC1ull));
    const double aspect = std::exp(rng.uniform(-0.6, 0.6));
    double cx, cy;
    if (spec.position) {
        cx = std::clamp((*spec.position)[0], static_cast<double>(bbox.x0),
                        static_cast<double>(bbox.x1));
        cy = std::clamp((*spec.position)[1], static_cast<double>(bbox.y0),
                        static_cast<double>(bbox.y1));
    } else {
        cx = rng.uniform(bbox.x0 + 0.25 * bbox.width(), bbox.x0 + 0.75 * bbox.width());
        cy = rng.uniform(bbox.y0 + 0.25 * bbox.height(), bbox.y0 + 0.75 * bbox.height());
    }

    // Paint, measure, rescale until the pixel count sits within tolerance.
    double scale = 1.0;
    long count = 0;
    Poly poly;
    if (spec.shape == OcclusionShape::kPolygon) {
        const int k = 5 + static_cast<int>(rng.below(4));
        const double base_r = std::sqrt(static_cast<double>(target) / 3.141592653589793);
        for (int i = 0; i < k; ++i) {
            const double ang = (i + rng.uniform(0.1, 0.9)) * 2.0 * 3.141592653589793 / k;
            const double r = base_r * rng.uniform(0.7, 1.3);
            poly.xs.push_back(std::cos(ang) * r);
            poly.ys.push_back(std::sin(ang) * r);
        }
    }
    for (int attempt = 0; attempt < 6; ++attempt) {
        std::fill(out.mask.begin(), out.mask.end(), 0);
        switch (spec.shape) {
        case OcclusionShape::kRectangle: {
            const double area = static_cast<double>(target) * scale * scale;
            const double w = std::min(std::sqrt(area * aspect), static_cast<double>(bbox.width()));
            const double h = std::min(area / w, static_cast<double>(bbox.height()));
            count = paint_rectangle(out.mask, image.width, image.height, cx, cy, 0.5 * w, 0.5 * h);
            break;
        }
        case OcclusionShape::kEllipse: {
            const double area = static_cast<double>(target) * scale * scale;
            const double a =
                std::min(std::sqrt(area * aspect / 3.141592653589793), 0.5 * bbox.width());
            const double b = std::min(area / (3.141592653589793 * a), 0.5 * bbox.height());
            count = paint_ellipse(out.mask, image.width, image.height, cx, cy, a, b);
            break;
        }
        case OcclusionShape::kPolygon: {
            Poly placed;
            placed.xs.resize(poly.xs.size());
            placed.ys.resize(poly.ys.size());
            for (std::size_t i = 0; i < poly.xs.size(); ++i) {
                placed.xs[i] = cx + poly.xs[i] * scale;
                placed.ys[i] = cy + poly.ys[i] * scale;
            }
            count = paint_polygon(out.mask, image.width, image.height, placed);
            break;
        }
        }
        if (count > 0) {
            const double ratio = static_cast<double>(count) / static_cast<double>(target);
            if (ratio > 0.95 && ratio < 1.05) break;
            scale *= std::sqrt(1.0 / ratio);
        } else {
            scale *= 2.0;
        }
    }

    std::array<double, 3> solid = spec.color;
    if (spec.color_mode == OcclusionColor::kSolidSeeded)
        solid = {rng.uniform(), rng.uniform(), rng.uniform()};
    const std::uint64_t pixel_stream = substream(spec.seed, 0xC0104ull);
    for (std::size_t p = 0; p < out.mask.size(); ++p) {
        if (!out.mask[p]) continue;
        if (spec.color_mode == OcclusionColor::kPerPixelRandom) {
            out.image.data[3 * p + 0] = hash_uniform(pixel_stream, 3 * p + 0);
            out.image.data[3 * p + 1] = hash_uniform(pixel_stream, 3 * p + 1);
            out.image.data[3 * p + 2] = hash_uniform(pixel_stream, 3 * p + 2);
        } else {
            out.image.data[3 * p + 0] = solid[0];
            out.image.data[3 * p + 1] = solid[1];
            out.image.data[3 * p + 2] = solid[2];
        }
    }
    return out;
}

Image add_noise(const Image& image, const NoiseSpec& spec) {
    spec.validate();
    Image out = image;
    const std::size_t pixels = image.pixel_count();
    const std::uint64_t stream = substream(spec.seed, 0x4015Eull);
    switch (spec.kind) {
    case NoiseKind::kGaussian:
        parallel::for_each_index(static_cast<std::int64_t>(3 * pixels), [&](std::int64_t i) {
            out.data[i] = std::clamp(image.data[i] + spec.sigma * hash_normal(stream, i), 0.0, 1.0);
        });
        break;
    case NoiseKind::kSaltPepper:
        parallel::for_each_index(static_cast<std::int64_t>(pixels), [&](std::int64_t p) {
            const double u = hash_uniform(stream, p);
            if (u < 0.5 * spec.p) {
                out.data[3 * p + 0] = out.data[3 * p + 1] = out.data[3 * p + 2] = 0.0;
            } else if (u < spec.p) {
                out.data[3 * p + 0] = out.data[3 * p + 1] = out.data[3 * p + 2] = 1.0;
            }
        });
        break;
    case NoiseKind::kSpeckle:
        parallel::for_each_index(static_cast<std::int64_t>(3 * pixels), [&](std::int64_t i) {
            out.data[i] =
                std::clamp(image.data[i] * (1.0 + spec.sigma * hash_normal(stream, i)), 0.0, 1.0);
        });
        break;
    }
    return out;
}

} // namespace facefit
