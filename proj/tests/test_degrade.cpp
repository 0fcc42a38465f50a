#include "facefit/degrade.hpp"

#include "facefit/dataset.hpp"
#include "facefit/errors.hpp"
#include "facefit/pipeline.hpp"
#include "facefit/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace facefit;

namespace {

Image random_image(int w, int h, std::uint64_t seed) {
    Image img(w, h);
    Rng rng(seed);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

RenderedFrame frame_with_square(int img_size, int x0, int y0, int side) {
    RenderedFrame f;
    f.rgb = Image(img_size, img_size, 0.5);
    f.coverage.assign(static_cast<std::size_t>(img_size) * img_size, 0);
    f.depth.assign(f.coverage.size(), 1.0);
    for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x)
            f.coverage[static_cast<std::size_t>(y) * img_size + x] = 1;
    return f;
}

long mask_area(const std::vector<unsigned char>& mask) {
    long n = 0;
    for (unsigned char m : mask) n += m ? 1 : 0;
    return n;
}

} // namespace

TEST_CASE("coverage bbox finds the covered square") {
    const RenderedFrame f = frame_with_square(128, 14, 20, 100);
    const FaceBBox box = coverage_bbox(f);
    CHECK(box.x0 == 14);
    CHECK(box.y0 == 20);
    CHECK(box.x1 == 114);
    CHECK(box.y1 == 120);
    CHECK(box.area() == 10000);

    RenderedFrame empty = f;
    std::fill(empty.coverage.begin(), empty.coverage.end(), 0);
    CHECK_THROWS_AS((void)coverage_bbox(empty), degenerate_render_error);
}

TEST_CASE("zero-coverage occlusion is the identity") {
    const Image img = random_image(128, 128, 1);
    const FaceBBox box{14, 20, 114, 120};
    OcclusionSpec spec;
    spec.coverage = 0.0;
    spec.seed = 3;
    const OcclusionResult out = overlay_occlusion(img, box, spec);
    CHECK(out.image.data == img.data);
    CHECK(mask_area(out.mask) == 0);
}

TEST_CASE("occlusion hits the target coverage within 10 percent") {
    const Image img = random_image(128, 128, 2);
    const FaceBBox box{14, 20, 114, 120}; // 100x100 face box
    for (const OcclusionShape shape :
         {OcclusionShape::kRectangle, OcclusionShape::kEllipse, OcclusionShape::kPolygon}) {
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            OcclusionSpec spec;
            spec.shape = shape;
            spec.coverage = 0.4;
            spec.seed = seed;
            const OcclusionResult out = overlay_occlusion(img, box, spec);
            const long area = mask_area(out.mask);
            CHECK(area >= 3600);
            CHECK(area <= 4400);
        }
    }
}

TEST_CASE("occlusion is deterministic per seed") {
    const Image img = random_image(64, 64, 3);
    const FaceBBox box{8, 8, 56, 56};
    OcclusionSpec spec;
    spec.shape = OcclusionShape::kPolygon;
    spec.coverage = 0.35;
    spec.color_mode = OcclusionColor::kPerPixelRandom;
    spec.seed = 11;
    const OcclusionResult a = overlay_occlusion(img, box, spec);
    const OcclusionResult b = overlay_occlusion(img, box, spec);
    CHECK(a.mask == b.mask);
    CHECK(a.image.data == b.image.data);
}

TEST_CASE("occlusion never alters pixels outside its mask") {
    const Image img = random_image(64, 64, 4);
    const FaceBBox box{6, 6, 58, 58};
    for (const OcclusionShape shape :
         {OcclusionShape::kRectangle, OcclusionShape::kEllipse, OcclusionShape::kPolygon}) {
        OcclusionSpec spec;
        spec.shape = shape;
        spec.coverage = 0.3;
        spec.seed = 21;
        const OcclusionResult out = overlay_occlusion(img, box, spec);
        for (std::size_t p = 0; p < out.mask.size(); ++p) {
            if (out.mask[p]) continue;
            CHECK(out.image.data[3 * p + 0] == img.data[3 * p + 0]);
            CHECK(out.image.data[3 * p + 1] == img.data[3 * p + 1]);
            CHECK(out.image.data[3 * p + 2] == img.data[3 * p + 2]);
        }
    }
}

TEST_CASE("explicit occlusion color and position are honored") {
    const Image img(64, 64, 0.5);
    const FaceBBox box{0, 0, 64, 64};
    OcclusionSpec spec;
    spec.shape = OcclusionShape::kRectangle;
    spec.color_mode = OcclusionColor::kSolidExplicit;
    spec.color = {0.1, 0.9, 0.3};
    spec.coverage = 0.1;
    spec.position = {{32.0, 32.0}};
    spec.seed = 5;
    const OcclusionResult out = overlay_occlusion(img, box, spec);
    CHECK(mask_area(out.mask) > 0);
    for (std::size_t p = 0; p < out.mask.size(); ++p)
        if (out.mask[p]) {
            CHECK(out.image.data[3 * p + 0] == 0.1);
            CHECK(out.image.data[3 * p + 1] == 0.9);
            CHECK(out.image.data[3 * p + 2] == 0.3);
        }
}

TEST_CASE("occlusion rejects a bbox outside the image") {
    const Image img(32, 32, 0.5);
    OcclusionSpec spec;
    CHECK_THROWS_AS((void)overlay_occlusion(img, FaceBBox{10, 10, 40, 20}, spec),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)overlay_occlusion(img, FaceBBox{5, 5, 5, 20}, spec),
                    std::invalid_argument);
}

TEST_CASE("salt and pepper with p = 0 is the identity") {
    const Image img = random_image(32, 32, 6);
    NoiseSpec spec;
    spec.kind = NoiseKind::kSaltPepper;
    spec.p = 0.0;
    spec.seed = 9;
    CHECK(add_noise(img, spec).data == img.data);
}

TEST_CASE("zero-magnitude noise of every kind is the identity") {
    const Image img = random_image(24, 24, 40);
    for (const NoiseKind kind :
         {NoiseKind::kGaussian, NoiseKind::kSaltPepper, NoiseKind::kSpeckle}) {
        NoiseSpec spec;
        spec.kind = kind;
        spec.sigma = 0.0;
        spec.p = 0.0;
        spec.seed = 17;
        CHECK(add_noise(img, spec).data == img.data);
    }
}

TEST_CASE("gaussian noise empirical std on a constant image") {
    const Image img(64, 64, 0.5);
    NoiseSpec spec;
    spec.kind = NoiseKind::kGaussian;
    spec.sigma = 0.1;
    spec.seed = 7;
    const Image noisy = add_noise(img, spec);
    double mean = 0.0;
    for (std::size_t i = 0; i < noisy.data.size(); ++i) mean += noisy.data[i] - img.data[i];
    mean /= static_cast<double>(noisy.data.size());
    double var = 0.0;
    for (std::size_t i = 0; i < noisy.data.size(); ++i) {
        const double d = noisy.data[i] - img.data[i] - mean;
        var += d * d;
    }
    const double std_dev = std::sqrt(var / static_cast<double>(noisy.data.size()));
    CHECK(std_dev > 0.095);
    CHECK(std_dev < 0.105);
}

TEST_CASE("speckle noise on a black image stays black") {
    const Image img(32, 32, 0.0);
    NoiseSpec spec;
    spec.kind = NoiseKind::kSpeckle;
    spec.sigma = 0.5;
    spec.seed = 8;
    CHECK(add_noise(img, spec).data == img.data);
}

TEST_CASE("noise stays in range and is deterministic") {
    const Image img = random_image(48, 48, 10);
    for (const NoiseKind kind :
         {NoiseKind::kGaussian, NoiseKind::kSaltPepper, NoiseKind::kSpeckle}) {
        NoiseSpec spec;
        spec.kind = kind;
        spec.sigma = 0.4;
        spec.p = 0.3;
        spec.seed = 11;
        const Image a = add_noise(img, spec);
        const Image b = add_noise(img, spec);
        CHECK(a.data == b.data);
        for (double v : a.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("salt and pepper flips roughly p of the pixels") {
    const Image img(64, 64, 0.5);
    NoiseSpec spec;
    spec.kind = NoiseKind::kSaltPepper;
    spec.p = 0.1;
    spec.seed = 12;
    const Image noisy = add_noise(img, spec);
    std::size_t salt = 0, pepper = 0;
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        if (noisy.data[3 * p] == 1.0) ++salt;
        if (noisy.data[3 * p] == 0.0) ++pepper;
    }
    const double frac = static_cast<double>(salt + pepper) / img.pixel_count();
    CHECK(frac > 0.07);
    CHECK(frac < 0.13);
    CHECK(salt > 0);
    CHECK(pepper > 0);
}

TEST_CASE("triplets share dimensions and keep the paired-mode invariant") {
    const MorphableBasis basis = generate_synthetic_basis(200, 7);
    const Camera cam{64.0, 32.0, 32.0, 64, 64};
    DatasetParams params;
    params.seed = 20;
    const TripletSample t = make_triplet(basis, cam, params, 0, 0);
    CHECK(t.guiding.width == t.occluded.width);
    CHECK(t.guiding.height == t.noisy.height);
    CHECK(t.gt_coeffs.has_value());
    CHECK(t.gt_landmarks.has_value());
    // paired mode: occluded equals guiding exactly outside the mask
    for (std::size_t p = 0; p < t.occlusion_mask.size(); ++p) {
        if (t.occlusion_mask[p]) continue;
        CHECK(t.occluded.data[3 * p + 0] == t.guiding.data[3 * p + 0]);
        CHECK(t.occluded.data[3 * p + 1] == t.guiding.data[3 * p + 1]);
        CHECK(t.occluded.data[3 * p + 2] == t.guiding.data[3 * p + 2]);
    }
    // triplets are deterministic
    const TripletSample u = make_triplet(basis, cam, params, 0, 0);
    CHECK(u.guiding.data == t.guiding.data);
    CHECK(u.occluded.data == t.occluded.data);
    CHECK(u.noisy.data == t.noisy.data);
}

TEST_CASE("unpaired mode redraws pose and illumination of the clean reference") {
    const MorphableBasis basis = generate_synthetic_basis(200, 7);
    const Camera cam{64.0, 32.0, 32.0, 64, 64};
    DatasetParams params;
    params.seed = 21;
    params.unpaired = true;
    const TripletSample t = make_triplet(basis, cam, params, 0, 0);
    REQUIRE(t.gt_coeffs.has_value());
    REQUIRE(t.gt_clean_coeffs.has_value());
    // identity segments match, pose and illumination differ
    for (int i = 0; i < coeff::kShapeSize; ++i)
        CHECK(t.gt_coeffs->values[i] == t.gt_clean_coeffs->values[i]);
    for (int i = 0; i < coeff::kTexSize; ++i)
        CHECK(t.gt_coeffs->values[coeff::kTexOffset + i] ==
              t.gt_clean_coeffs->values[coeff::kTexOffset + i]);
    bool pose_differs = false;
    for (int i = 0; i < coeff::kPoseSize; ++i)
        pose_differs |= t.gt_coeffs->values[coeff::kPoseOffset + i] !=
                        t.gt_clean_coeffs->values[coeff::kPoseOffset + i];
    CHECK(pose_differs);
    CHECK(t.guiding.data != t.occluded.data);
}
