#include "facefit/render.hpp"

#include "facefit/errors.hpp"
#include "facefit/mm.hpp"
#include "facefit/rng.hpp"
#include "facefit/tape.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

using namespace facefit;

namespace {

Camera test_camera(int size = 64) {
    Camera c;
    c.focal = size;
    c.cx = size / 2.0;
    c.cy = size / 2.0;
    c.width = size;
    c.height = size;
    return c;
}

CoeffVector posed_coeffs(std::uint64_t seed = 0, double coeff_scale = 0.3) {
    Rng rng(seed);
    CoeffVector c;
    if (seed != 0) {
        for (double& v : c.shape()) v = coeff_scale * rng.normal();
        for (double& v : c.expression()) v = 0.2 * rng.normal();
        for (double& v : c.texture()) v = coeff_scale * rng.normal();
    }
    auto illum = c.illumination();
    for (int ch = 0; ch < 3; ++ch) {
        illum[ch * 9] = 3.2;
        if (seed != 0)
            for (int b = 1; b < 9; ++b) illum[ch * 9 + b] = 0.06 * rng.normal();
    }
    auto pose = c.pose();
    if (seed != 0) {
        pose[0] = 0.05 * rng.normal();
        pose[1] = 0.05 * rng.normal();
        pose[2] = 0.05 * rng.normal();
        pose[3] = 0.05 * rng.normal();
        pose[4] = 0.05 * rng.normal();
    }
    pose[5] = 2.9;
    return c;
}

// Brute-force coverage oracle: every pixel against one triangle, same edge
// predicate, no bounding box or binning.
std::set<int> brute_force_coverage(const ProjectedVertex& a, const ProjectedVertex& b,
                                   const ProjectedVertex& c, int width, int height) {
    std::set<int> covered;
    if (a.clipped || b.clipped || c.clipped) return covered;
    const auto edge = [](double ax, double ay, double bx, double by, double px, double py) {
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    };
    const double area2 = edge(a.x, a.y, b.x, b.y, c.x, c.y);
    if (area2 == 0.0) return covered;
    const ProjectedVertex& v1 = area2 > 0.0 ? b : c;
    const ProjectedVertex& v2 = area2 > 0.0 ? c : b;
    const auto accepts = [](double dx, double dy) {
        return dy < 0.0 || (dy == 0.0 && dx > 0.0);
    };
    const bool acc0 = accepts(v2.x - v1.x, v2.y - v1.y);
    const bool acc1 = accepts(a.x - v2.x, a.y - v2.y);
    const bool acc2 = accepts(v1.x - a.x, v1.y - a.y);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double e0 = edge(v1.x, v1.y, v2.x, v2.y, px, py);
            const double e1 = edge(v2.x, v2.y, a.x, a.y, px, py);
            const double e2 = edge(a.x, a.y, v1.x, v1.y, px, py);
            if (e0 < 0.0 || e1 < 0.0 || e2 < 0.0) continue;
            if (e0 == 0.0 && !acc0) continue;
            if (e1 == 0.0 && !acc1) continue;
            if (e2 == 0.0 && !acc2) continue;
            covered.insert(y * width + x);
        }
    }
    return covered;
}

ProjectedVertex pv(double x, double y, double depth) { return {x, y, depth, false}; }

} // namespace

TEST_CASE("sh_shade band-0 analytic value") {
    const std::vector<double> normal{0.0, 0.0, -1.0};
    const std::vector<double> albedo{0.5, 0.25, 1.0};
    std::vector<double> gamma(27, 0.0);
    gamma[0] = gamma[9] = gamma[18] = 2.0;
    const auto out = sh_shade(normal, albedo, gamma);
    for (int c = 0; c < 3; ++c)
        CHECK(out[c] == doctest::Approx(albedo[c] * 2.0 * 0.282095).epsilon(1e-12));
}

TEST_CASE("sh_shade with black albedo is black") {
    const std::vector<double> normal{0.0, 1.0, 0.0};
    const std::vector<double> albedo{0.0, 0.0, 0.0};
    std::vector<double> gamma(27);
    Rng rng(4);
    for (double& g : gamma) g = rng.normal();
    const auto out = sh_shade(normal, albedo, gamma);
    CHECK(out == std::array<double, 3>{0.0, 0.0, 0.0});
}

TEST_CASE("sh_shade matches a scalar SH polynomial oracle") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        double nx = rng.normal(), ny = rng.normal(), nz = rng.normal();
        const double nn = std::sqrt(nx * nx + ny * ny + nz * nz);
        nx /= nn;
        ny /= nn;
        nz /= nn;
        const std::vector<double> normal{nx, ny, nz};
        std::vector<double> albedo{rng.uniform(), rng.uniform(), rng.uniform()};
        std::vector<double> gamma(27);
        for (double& g : gamma) g = 0.2 * rng.normal();
        const auto out = sh_shade(normal, albedo, gamma);
        for (int c = 0; c < 3; ++c) {
            const double H[9] = {0.282095,
                                 0.488603 * ny,
                                 0.488603 * nz,
                                 0.488603 * nx,
                                 1.092548 * nx * ny,
                                 1.092548 * ny * nz,
                                 0.315392 * (3.0 * nz * nz - 1.0),
                                 1.092548 * nx * nz,
                                 0.546274 * (nx * nx - ny * ny)};
            double s = 0.0;
            for (int b = 0; b < 9; ++b) s += gamma[c * 9 + b] * H[b];
            const double expect = std::clamp(albedo[c] * s, 0.0, 1.0);
            CHECK(out[c] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("sh_shade rejects non-unit normals") {
    const std::vector<double> normal{0.0, 0.0, -1.1};
    const std::vector<double> albedo{0.5, 0.5, 0.5};
    const std::vector<double> gamma(27, 0.0);
    CHECK_THROWS_AS((void)sh_shade(normal, albedo, gamma), std::invalid_argument);
}

TEST_CASE("sh_shade is linear in gamma away from the clamp") {
    const std::vector<double> normal{0.0, 0.0, -1.0};
    const std::vector<double> albedo{0.6, 0.6, 0.6};
    std::vector<double> g1(27, 0.0), g2(27, 0.0), gsum(27, 0.0);
    Rng rng(77);
    for (int i = 0; i < 27; ++i) {
        g1[i] = 0.2 * rng.normal();
        g2[i] = 0.2 * rng.normal();
        gsum[i] = 0.5 * (g1[i] + g2[i]);
    }
    g1[0] = g1[9] = g1[18] = 1.2;
    g2[0] = g2[9] = g2[18] = 1.6;
    gsum[0] = gsum[9] = gsum[18] = 1.4;
    const auto o1 = sh_shade(normal, albedo, g1);
    const auto o2 = sh_shade(normal, albedo, g2);
    const auto os = sh_shade(normal, albedo, gsum);
    for (int c = 0; c < 3; ++c)
        CHECK(os[c] == doctest::Approx(0.5 * (o1[c] + o2[c])).epsilon(1e-9));
}

TEST_CASE("projection: optical axis lands on the principal point") {
    const Camera cam = test_camera();
    const std::vector<double> geometry{0.0, 0.0, 3.7};
    const std::vector<double> pose(6, 0.0);
    const auto out = project_vertices(geometry, pose, cam);
    CHECK(out[0].x == doctest::Approx(cam.cx));
    CHECK(out[0].y == doctest::Approx(cam.cy));
    CHECK(out[0].depth == doctest::Approx(3.7));
}

TEST_CASE("projection: doubling depth halves the principal-point offset") {
    const Camera cam = test_camera();
    const std::vector<double> geometry{0.3, -0.2, 2.0, 0.3, -0.2, 4.0};
    const std::vector<double> pose(6, 0.0);
    const auto out = project_vertices(geometry, pose, cam);
    CHECK(out[1].x - cam.cx == doctest::Approx(0.5 * (out[0].x - cam.cx)).epsilon(1e-12));
    CHECK(out[1].y - cam.cy == doctest::Approx(0.5 * (out[0].y - cam.cy)).epsilon(1e-12));
}

TEST_CASE("projection matches a homogeneous-matrix oracle") {
    const Camera cam = test_camera(128);
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> pose(6);
        for (double& p : pose) p = 0.3 * rng.normal();
        pose[5] = 4.0 + rng.uniform();
        std::vector<double> geometry(3 * 20);
        for (double& g : geometry) g = 0.4 * rng.normal();

        // Independent 4x4 pipeline: M = T * Rx * Ry * Rz as row-major mats.
        auto matmul = [](const std::vector<double>& a, const std::vector<double>& b) {
            std::vector<double> c(16, 0.0);
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j)
                    for (int k = 0; k < 4; ++k) c[4 * i + j] += a[4 * i + k] * b[4 * k + j];
            return c;
        };
        const double cx = std::cos(pose[0]), sx = std::sin(pose[0]);
        const double cy = std::cos(pose[1]), sy = std::sin(pose[1]);
        const double cz = std::cos(pose[2]), sz = std::sin(pose[2]);
        const std::vector<double> Rx{1, 0, 0, 0, 0, cx, -sx, 0, 0, sx, cx, 0, 0, 0, 0, 1};
        const std::vector<double> Ry{cy, 0, sy, 0, 0, 1, 0, 0, -sy, 0, cy, 0, 0, 0, 0, 1};
        const std::vector<double> Rz{cz, -sz, 0, 0, sz, cz, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
        const std::vector<double> T{1, 0, 0, pose[3], 0, 1, 0, pose[4], 0, 0, 1, pose[5],
                                    0, 0, 0, 1};
        const std::vector<double> M = matmul(T, matmul(Rx, matmul(Ry, Rz)));

        const auto out = project_vertices(geometry, pose, cam);
        for (int v = 0; v < 20; ++v) {
            const double* p = geometry.data() + 3 * v;
            const double X = M[0] * p[0] + M[1] * p[1] + M[2] * p[2] + M[3];
            const double Y = M[4] * p[0] + M[5] * p[1] + M[6] * p[2] + M[7];
            const double Z = M[8] * p[0] + M[9] * p[1] + M[10] * p[2] + M[11];
            CHECK(out[v].x == doctest::Approx(cam.focal * X / Z + cam.cx).epsilon(1e-9));
            CHECK(out[v].y == doctest::Approx(cam.focal * Y / Z + cam.cy).epsilon(1e-9));
            CHECK(out[v].depth == doctest::Approx(Z).epsilon(1e-12));
        }
    }
}

TEST_CASE("vertices behind the near plane are flagged, not fatal") {
    const Camera cam = test_camera();
    const std::vector<double> geometry{0.0, 0.0, -1.0, 0.0, 0.0, 2.0};
    const std::vector<double> pose(6, 0.0);
    const auto out = project_vertices(geometry, pose, cam);
    CHECK(out[0].clipped);
    CHECK_FALSE(out[1].clipped);
}

TEST_CASE("z-buffer keeps the nearer triangle") {
    const std::vector<ProjectedVertex> verts{
        pv(10, 10, 1.0), pv(50, 10, 1.0), pv(10, 50, 1.0), // near
        pv(10, 10, 2.0), pv(50, 10, 2.0), pv(10, 50, 2.0), // far
    };
    const std::vector<std::array<std::uint32_t, 3>> tris{{0, 1, 2}, {3, 4, 5}};
    std::vector<double> colors(3 * 6, 0.0);
    for (int v = 0; v < 3; ++v) colors[3 * v] = 1.0;     // near is red
    for (int v = 3; v < 6; ++v) colors[3 * v + 2] = 1.0; // far is blue
    const RenderedFrame frame = rasterize(verts, tris, colors, 64, 64, nullptr);
    CHECK(frame.covered_count() > 0);
    for (std::size_t p = 0; p < frame.coverage.size(); ++p) {
        if (!frame.coverage[p]) continue;
        CHECK(frame.rgb.data[3 * p + 0] == doctest::Approx(1.0));
        CHECK(frame.rgb.data[3 * p + 2] == doctest::Approx(0.0));
        CHECK(frame.depth[p] == doctest::Approx(1.0));
    }
}

TEST_CASE("zero-area triangles cover nothing") {
    const std::vector<ProjectedVertex> verts{pv(10, 10, 1), pv(30, 30, 1), pv(20, 20, 1)};
    const std::vector<std::array<std::uint32_t, 3>> tris{{0, 1, 2}};
    const std::vector<double> colors(9, 0.5);
    const RenderedFrame frame = rasterize(verts, tris, colors, 64, 64, nullptr);
    CHECK(frame.covered_count() == 0);
}

TEST_CASE("coverage equals the brute-force oracle on 100 random triangles") {
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ProjectedVertex> verts(3);
        for (auto& v : verts) {
            // Mix of in-frame and out-of-frame coordinates, including exact
            // half-integer positions that land on pixel centers.
            v.x = std::round(rng.uniform(-8.0, 72.0) * 2.0) / 2.0;
            v.y = std::round(rng.uniform(-8.0, 72.0) * 2.0) / 2.0;
            v.depth = rng.uniform(0.5, 4.0);
        }
        const std::vector<std::array<std::uint32_t, 3>> tris{{0, 1, 2}};
        const std::vector<double> colors(9, 0.5);
        const RenderedFrame frame = rasterize(verts, tris, colors, 64, 64, nullptr);
        const std::set<int> oracle = brute_force_coverage(verts[0], verts[1], verts[2], 64, 64);
        std::set<int> got;
        for (std::size_t p = 0; p < frame.coverage.size(); ++p)
            if (frame.coverage[p]) got.insert(static_cast<int>(p));
        CHECK(got == oracle);
    }
}

TEST_CASE("adjacent triangles cover shared-edge pixels exactly once") {
    // Quad split along the diagonal; pixel centers on the shared edges must
    // belong to exactly one triangle.
    const std::vector<ProjectedVertex> verts{pv(8.5, 8.5, 1), pv(40.5, 8.5, 1),
                                             pv(40.5, 40.5, 1), pv(8.5, 40.5, 1)};
    const std::vector<std::array<std::uint32_t, 3>> tris{{0, 1, 2}, {0, 2, 3}};
    std::vector<double> colors(12, 0.0);
    for (int v = 0; v < 4; ++v) colors[3 * v] = 1.0;
    const RenderedFrame both = rasterize(verts, tris, colors, 64, 64, nullptr);

    const std::vector<std::array<std::uint32_t, 3>> tri_a{{0, 1, 2}};
    const std::vector<std::array<std::uint32_t, 3>> tri_b{{0, 2, 3}};
    const RenderedFrame only_a = rasterize(verts, tri_a, colors, 64, 64, nullptr);
    const RenderedFrame only_b = rasterize(verts, tri_b, colors, 64, 64, nullptr);
    for (std::size_t p = 0; p < both.coverage.size(); ++p) {
        const int count = (only_a.coverage[p] ? 1 : 0) + (only_b.coverage[p] ? 1 : 0);
        CHECK(count == (both.coverage[p] ? 1 : 0));
        CHECK(count <= 1);
    }
}

TEST_CASE("render_face leaves uncovered pixels black without a background") {
    const MorphableBasis basis = generate_synthetic_basis(200, 7);
    const Camera cam = test_camera();
    const RenderedFrame frame = render_face(basis, posed_coeffs(), cam, nullptr);
    CHECK(frame.covered_count() > 100);
    for (std::size_t p = 0; p < frame.coverage.size(); ++p) {
        if (frame.coverage[p]) {
            CHECK(std::isfinite(frame.depth[p]));
        } else {
            CHECK(frame.rgb.data[3 * p + 0] == 0.0);
            CHECK(frame.rgb.data[3 * p + 1] == 0.0);
            CHECK(frame.rgb.data[3 * p + 2] == 0.0);
            CHECK(std::isinf(frame.depth[p]));
        }
    }
}

TEST_CASE("render_face is deterministic") {
    const MorphableBasis basis = generate_synthetic_basis(220, 3);
    const Camera cam = test_camera();
    const CoeffVector c = posed_coeffs(15);
    const RenderedFrame a = render_face(basis, c, cam, nullptr);
    const RenderedFrame b = render_face(basis, c, cam, nullptr);
    CHECK(a.rgb.data == b.rgb.data);
    CHECK(a.coverage == b.coverage);
    CHECK(a.depth == b.depth);
}

TEST_CASE("render_face rejects a mismatched background") {
    const MorphableBasis basis = generate_synthetic_basis(100, 3);
    const Camera cam = test_camera();
    const Image bg(32, 32, 0.0);
    CHECK_THROWS_AS((void)render_face(basis, posed_coeffs(), cam, &bg), std::invalid_argument);
}

TEST_CASE("mean face under band-0 light matches per-pixel re-evaluation") {
    const MorphableBasis basis = generate_synthetic_basis(300, 12);
    const Camera cam = test_camera();
    CoeffVector c = posed_coeffs();
    // band-0 only: every vertex color is albedo * gamma0 * 0.282095,
    // independent of the normal, so each covered pixel must equal that same
    // transform of the interpolated albedo.
    const double g0 = 2.5;
    auto illum = c.illumination();
    std::fill(illum.begin(), illum.end(), 0.0);
    illum[0] = illum[9] = illum[18] = g0;

    const RenderedFrame frame = render_face(basis, c, cam, nullptr);
    CHECK(frame.covered_count() > 100);

    const std::vector<double> geometry = morph_geometry(basis, c);
    std::vector<double> albedo = morph_texture(basis, c);
    for (double& a : albedo) a = std::clamp(a, 0.0, 1.0);
    const auto projected = project_vertices(geometry, c.pose(), cam);
    const RenderedFrame albedo_frame =
        rasterize(projected, basis.triangles, albedo, cam.width, cam.height, nullptr);
    for (std::size_t p = 0; p < frame.coverage.size(); ++p) {
        if (!frame.coverage[p]) continue;
        for (int ch = 0; ch < 3; ++ch) {
            const double expect =
                std::min(1.0, albedo_frame.rgb.data[3 * p + ch] * (g0 * 0.282095));
            CHECK(frame.rgb.data[3 * p + ch] == doctest::Approx(expect).epsilon(1e-9));
        }
    }
}

TEST_CASE("landmarks ignore texture coefficients") {
    const MorphableBasis basis = generate_synthetic_basis(250, 6);
    const Camera cam = test_camera();
    CoeffVector a = posed_coeffs(8);
    CoeffVector b = a;
    Rng rng(88);
    for (double& v : b.texture()) v = rng.normal();
    const LandmarkSet la = project_landmarks(basis, a, cam);
    const LandmarkSet lb = project_landmarks(basis, b, cam);
    CHECK(la.points == lb.points);
}

TEST_CASE("landmarks equal the projected vertices at landmark indices") {
    const MorphableBasis basis = generate_synthetic_basis(250, 6);
    const Camera cam = test_camera();
    const CoeffVector c = posed_coeffs(9);
    const LandmarkSet lm = project_landmarks(basis, c, cam);
    const auto projected = project_vertices(morph_geometry(basis, c), c.pose(), cam);
    for (int k = 0; k < 68; ++k) {
        const ProjectedVertex& v = projected[basis.landmark_indices[k]];
        CHECK(lm.points[k][0] == v.x);
        CHECK(lm.points[k][1] == v.y);
    }
}

TEST_CASE("clipped landmarks raise an error naming the landmark") {
    const MorphableBasis basis = generate_synthetic_basis(100, 2);
    const Camera cam = test_camera();
    CoeffVector c = posed_coeffs();
    c.pose()[5] = -5.0; // face behind the camera
    CHECK_THROWS_AS((void)project_landmarks(basis, c, cam), degenerate_render_error);
}

TEST_CASE("coverage never shrinks as the face approaches the camera") {
    const MorphableBasis basis = generate_synthetic_basis(300, 4);
    const Camera cam = test_camera();
    CoeffVector c = posed_coeffs();
    std::size_t prev = 0;
    for (double z = 3.6; z >= 2.2; z -= 0.2) {
        c.pose()[5] = z;
        const RenderedFrame frame = render_face(basis, c, cam, nullptr);
        CHECK(frame.covered_count() >= prev);
        prev = frame.covered_count();
    }
}

TEST_CASE("tape render reproduces the plain render exactly") {
    const MorphableBasis basis = generate_synthetic_basis(260, 5);
    const Camera cam = test_camera();
    const CoeffVector c = posed_coeffs(33);
    Image bg(cam.width, cam.height, 0.0);
    Rng rng(3);
    for (double& v : bg.data) v = rng.uniform();

    const RenderedFrame plain = render_face(basis, c, cam, &bg);

    ad::Tape tape;
    std::vector<ad::Var> cv(coeff::kTotal);
    tape.bind_inputs(c.values, cv);
    const TapeFace face = render_face_tape(tape, basis, cv, cam, &bg);

    CHECK(face.frame.coverage == plain.coverage);
    CHECK(face.frame.rgb.data == plain.rgb.data);
    for (std::size_t i = 0; i < face.covered.size(); ++i) {
        const std::uint32_t p = face.covered[i];
        for (int ch = 0; ch < 3; ++ch)
            CHECK(face.pixel_rgb[3 * i + ch].value() == plain.rgb.data[3 * p + ch]);
    }
    const LandmarkSet lm = project_landmarks(basis, c, cam);
    for (int k = 0; k < 68; ++k) {
        CHECK(face.landmark_xy[2 * k].value() == doctest::Approx(lm.points[k][0]).epsilon(1e-14));
        CHECK(face.landmark_xy[2 * k + 1].value() ==
              doctest::Approx(lm.points[k][1]).epsilon(1e-14));
    }
}
