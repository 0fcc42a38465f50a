#include "facefit/render.hpp"

#include "facefit/errors.hpp"
#include "facefit/parallel.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>

namespace facefit {

namespace {

constexpr double kSH0 = 0.282095;
constexpr double kSH1 = 0.488603; // * y, z, x
constexpr double kSH4 = 1.092548; // * xy, yz, xz
constexpr double kSH6 = 0.315392; // * (3z^2 - 1)
constexpr double kSH8 = 0.546274; // * (x^2 - y^2)

constexpr double kInf = std::numeric_limits<double>::infinity();

// Boundary pixels (edge value exactly 0) belong to the triangle whose
// oriented edge points up, or horizontally to the right (top-left rule for
// y-down pixel coordinates and positive-area winding).
inline bool edge_accepts_boundary(double dx, double dy) {
    return dy < 0.0 || (dy == 0.0 && dx > 0.0);
}

inline double edge_value(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

struct Rotation {
    double r[9];
};

// R = Rx(rx) * Ry(ry) * Rz(rz). The tape recording in rotation_vars() mirrors
// these exact expressions.
Rotation rotation_matrix(double rx, double ry, double rz) {
    const double sx = std::sin(rx), cx = std::cos(rx);
    const double sy = std::sin(ry), cy = std::cos(ry);
    const double sz = std::sin(rz), cz = std::cos(rz);
    Rotation R;
    R.r[0] = cy * cz;
    R.r[1] = -(cy * sz);
    R.r[2] = sy;
    R.r[3] = cx * sz + sx * sy * cz;
    R.r[4] = cx * cz - sx * sy * sz;
    R.r[5] = -(sx * cy);
    R.r[6] = sx * sz - cx * sy * cz;
    R.r[7] = sx * cz + cx * sy * sz;
    R.r[8] = cx * cy;
    return R;
}

struct VarRotation {
    ad::Var r[9];
};

VarRotation rotation_vars(const ad::Var& rx, const ad::Var& ry, const ad::Var& rz) {
    const ad::Var sx = ad::sin(rx), cx = ad::cos(rx);
    const ad::Var sy = ad::sin(ry), cy = ad::cos(ry);
    const ad::Var sz = ad::sin(rz), cz = ad::cos(rz);
    VarRotation R;
    R.r[0] = cy * cz;
    R.r[1] = -(cy * sz);
    R.r[2] = sy;
    R.r[3] = cx * sz + sx * sy * cz;
    R.r[4] = cx * cz - sx * sy * sz;
    R.r[5] = -(sx * cy);
    R.r[6] = sx * sz - cx * sy * cz;
    R.r[7] = sx * cz + cx * sy * sz;
    R.r[8] = cx * cy;
    return R;
}

} // namespace

void Camera::validate() const {
    if (!(focal > 0.0) || !std::isfinite(focal))
        throw std::invalid_argument("camera focal length must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera image size must be positive");
    if (cx < 0.0 || cx > width || cy < 0.0 || cy > height)
        throw std::invalid_argument("camera principal point outside image bounds");
}

std::size_t RenderedFrame::covered_count() const {
    std::size_t n = 0;
    for (unsigned char c : coverage) n += c ? 1 : 0;
    return n;
}

void sh_basis(double nx, double ny, double nz, std::span<double> out9) {
    assert(out9.size() >= 9);
    out9[0] = kSH0;
    out9[1] = kSH1 * ny;
    out9[2] = kSH1 * nz;
    out9[3] = kSH1 * nx;
    out9[4] = kSH4 * (nx * ny);
    out9[5] = kSH4 * (ny * nz);
    out9[6] = kSH6 * (3.0 * (nz * nz) - 1.0);
    out9[7] = kSH4 * (nx * nz);
    out9[8] = kSH8 * (nx * nx - ny * ny);
}

std::array<double, 3> sh_shade(std::span<const double> normal, std::span<const double> albedo,
                               std::span<const double> gamma) {
    if (normal.size() != 3 || albedo.size() != 3 || gamma.size() != 27)
        throw std::invalid_argument("sh_shade: bad argument sizes");
    const double n2 = normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2];
    if (std::fabs(std::sqrt(n2) - 1.0) > 1e-6)
        throw std::invalid_argument("sh_shade: normal must be unit length");
    double H[9];
    sh_basis(normal[0], normal[1], normal[2], H);
    std::array<double, 3> out{};
    for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int b = 0; b < 9; ++b) s += gamma[c * 9 + b] * H[b];
        out[c] = std::clamp(albedo[c] * s, 0.0, 1.0);
    }
    return out;
}

std::vector<ProjectedVertex> project_vertices(std::span<const double> geometry,
                                              std::span<const double> pose,
                                              const Camera& camera) {
    if (pose.size() != 6) throw std::invalid_argument("pose must have 6 components");
    if (geometry.size() % 3 != 0) throw std::invalid_argument("geometry length must be 3N");
    camera.validate();
    const Rotation R = rotation_matrix(pose[0], pose[1], pose[2]);
    const double tx = pose[3], ty = pose[4], tz = pose[5];
    const std::size_t n = geometry.size() / 3;
    std::vector<ProjectedVertex> out(n);
    parallel::for_each_index(static_cast<std::int64_t>(n), [&](std::int64_t i) {
        const double* p = geometry.data() + 3 * i;
        const double X = (R.r[0] * p[0] + R.r[1] * p[1]) + R.r[2] * p[2] + tx;
        const double Y = (R.r[3] * p[0] + R.r[4] * p[1]) + R.r[5] * p[2] + ty;
        const double Z = (R.r[6] * p[0] + R.r[7] * p[1]) + R.r[8] * p[2] + tz;
        ProjectedVertex& v = out[i];
        v.depth = Z;
        if (Z <= kNearEpsilon) {
            v.clipped = true;
            v.x = v.y = 0.0;
            return;
        }
        const double invz = 1.0 / Z;
        v.x = camera.focal * X * invz + camera.cx;
        v.y = camera.focal * Y * invz + camera.cy;
    });
    return out;
}

std::vector<double> vertex_normals(const MorphableBasis& basis, std::span<const double> geometry) {
    const std::size_t n3 = 3 * static_cast<std::size_t>(basis.vertex_count);
    if (geometry.size() != n3) throw std::invalid_argument("vertex_normals: geometry size mismatch");
    const std::size_t faces = basis.triangles.size();
    std::vector<double> face_n(3 * faces);
    parallel::for_each_index(static_cast<std::int64_t>(faces), [&](std::int64_t f) {
        const auto& t = basis.triangles[f];
        const double* p0 = geometry.data() + 3 * t[0];
        const double* p1 = geometry.data() + 3 * t[1];
        const double* p2 = geometry.data() + 3 * t[2];
        const double ax = p1[0] - p0[0], ay = p1[1] - p0[1], az = p1[2] - p0[2];
        const double bx = p2[0] - p0[0], by = p2[1] - p0[1], bz = p2[2] - p0[2];
        face_n[3 * f + 0] = ay * bz - az * by;
        face_n[3 * f + 1] = az * bx - ax * bz;
        face_n[3 * f + 2] = ax * by - ay * bx;
    });
    std::vector<double> out(n3);
    parallel::for_each_index(static_cast<std::int64_t>(basis.vertex_count), [&](std::int64_t v) {
        double nx = 0.0, ny = 0.0, nz = 0.0;
        for (std::uint32_t k = basis.vertex_face_offsets[v]; k < basis.vertex_face_offsets[v + 1];
             ++k) {
            const std::uint32_t f = basis.vertex_face_ids[k];
            nx = nx + face_n[3 * f + 0];
            ny = ny + face_n[3 * f + 1];
            nz = nz + face_n[3 * f + 2];
        }
        const double sq = (nx * nx + ny * ny) + nz * nz;
        const double norm = std::sqrt(sq);
        if (norm < 1e-12) {
            out[3 * v + 0] = 0.0;
            out[3 * v + 1] = 0.0;
            out[3 * v + 2] = -1.0;
        } else {
            const double inv = 1.0 / norm;
            out[3 * v + 0] = nx * inv;
            out[3 * v + 1] = ny * inv;
            out[3 * v + 2] = nz * inv;
        }
    });
    return out;
}

namespace {

struct OrientedTri {
    std::uint32_t idx[3];  // vertex ids in positive-area order
    bool accept[3];        // boundary rule per edge (edge k is opposite vertex k)
    std::int32_t id;       // original triangle id
    int x_lo, x_hi;        // inclusive pixel column range
};

// Per-pixel interpolation shared between the forward rasterizer and the tape
// recording; both must keep this exact expression order.
struct PixelInterp {
    double w0, w1, w2, wsum;
};

inline bool pixel_inside(const OrientedTri& tri, std::span<const ProjectedVertex> vs, double px,
                         double py, double e[3]) {
    const ProjectedVertex& v0 = vs[tri.idx[0]];
    const ProjectedVertex& v1 = vs[tri.idx[1]];
    const ProjectedVertex& v2 = vs[tri.idx[2]];
    e[0] = edge_value(v1.x, v1.y, v2.x, v2.y, px, py);
    e[1] = edge_value(v2.x, v2.y, v0.x, v0.y, px, py);
    e[2] = edge_value(v0.x, v0.y, v1.x, v1.y, px, py);
    for (int k = 0; k < 3; ++k) {
        if (e[k] < 0.0) return false;
        if (e[k] == 0.0 && !tri.accept[k]) return false;
    }
    return true;
}

} // namespace

RenderedFrame rasterize(std::span<const ProjectedVertex> vertices,
                        std::span<const std::array<std::uint32_t, 3>> triangles,
                        std::span<const double> vertex_colors, int width, int height,
                        std::vector<std::int32_t>* tri_ids_out) {
    if (vertex_colors.size() != 3 * vertices.size())
        throw std::invalid_argument("rasterize: vertex color size mismatch");
    RenderedFrame frame;
    frame.rgb = Image(width, height, 0.0);
    frame.coverage.assign(static_cast<std::size_t>(width) * height, 0);
    frame.depth.assign(static_cast<std::size_t>(width) * height, kInf);
    if (tri_ids_out) tri_ids_out->assign(frame.coverage.size(), -1);

    // Bin triangles by pixel row; bins stay in ascending triangle id order so
    // each row is processed identically no matter how rows are scheduled.
    std::vector<std::vector<OrientedTri>> rows(static_cast<std::size_t>(height));
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        const auto& tri = triangles[t];
        if (tri[0] >= vertices.size() || tri[1] >= vertices.size() || tri[2] >= vertices.size())
            throw std::invalid_argument("rasterize: triangle index out of range");
        const ProjectedVertex& a = vertices[tri[0]];
        const ProjectedVertex& b = vertices[tri[1]];
        const ProjectedVertex& c = vertices[tri[2]];
        if (a.clipped || b.clipped || c.clipped) continue;
        const double area2 = edge_value(a.x, a.y, b.x, b.y, c.x, c.y);
        if (area2 == 0.0) continue;
        OrientedTri ot;
        ot.id = static_cast<std::int32_t>(t);
        ot.idx[0] = tri[0];
        if (area2 > 0.0) {
            ot.idx[1] = tri[1];
            ot.idx[2] = tri[2];
        } else {
            ot.idx[1] = tri[2];
            ot.idx[2] = tri[1];
        }
        const ProjectedVertex& v0 = vertices[ot.idx[0]];
        const ProjectedVertex& v1 = vertices[ot.idx[1]];
        const ProjectedVertex& v2 = vertices[ot.idx[2]];
        ot.accept[0] = edge_accepts_boundary(v2.x - v1.x, v2.y - v1.y);
        ot.accept[1] = edge_accepts_boundary(v0.x - v2.x, v0.y - v2.y);
        ot.accept[2] = edge_accepts_boundary(v1.x - v0.x, v1.y - v0.y);
        const double xmin = std::min({v0.x, v1.x, v2.x});
        const double xmax = std::max({v0.x, v1.x, v2.x});
        const double ymin = std::min({v0.y, v1.y, v2.y});
        const double ymax = std::max({v0.y, v1.y, v2.y});
        ot.x_lo = std::max(0, static_cast<int>(std::ceil(xmin - 0.5)));
        ot.x_hi = std::min(width - 1, static_cast<int>(std::floor(xmax - 0.5)));
        if (ot.x_lo > ot.x_hi) continue;
        const int y_lo = std::max(0, static_cast<int>(std::ceil(ymin - 0.5)));
        const int y_hi = std::min(height - 1, static_cast<int>(std::floor(ymax - 0.5)));
        for (int y = y_lo; y <= y_hi; ++y) rows[y].push_back(ot);
    }

    parallel::for_each_index(height, [&](std::int64_t iy) {
        const double py = static_cast<double>(iy) + 0.5;
        for (const OrientedTri& tri : rows[iy]) {
            const ProjectedVertex& v0 = vertices[tri.idx[0]];
            const ProjectedVertex& v1 = vertices[tri.idx[1]];
            const ProjectedVertex& v2 = vertices[tri.idx[2]];
            const double invz0 = 1.0 / v0.depth;
            const double invz1 = 1.0 / v1.depth;
            const double invz2 = 1.0 / v2.depth;
            for (int ix = tri.x_lo; ix <= tri.x_hi; ++ix) {
                const double px = static_cast<double>(ix) + 0.5;
                double e[3];
                if (!pixel_inside(tri, vertices, px, py, e)) continue;
                const double w0 = e[0] * invz0;
                const double w1 = e[1] * invz1;
                const double w2 = e[2] * invz2;
                const double wsum = (w0 + w1) + w2;
                const double esum = (e[0] + e[1]) + e[2];
                const double depth = esum / wsum;
                const std::size_t p = static_cast<std::size_t>(iy) * width + ix;
                if (depth < frame.depth[p]) {
                    frame.depth[p] = depth;
                    frame.coverage[p] = 1;
                    if (tri_ids_out) (*tri_ids_out)[p] = tri.id;
                    const double* c0 = vertex_colors.data() + 3 * tri.idx[0];
                    const double* c1 = vertex_colors.data() + 3 * tri.idx[1];
                    const double* c2 = vertex_colors.data() + 3 * tri.idx[2];
                    const double invw = 1.0 / wsum;
                    for (int ch = 0; ch < 3; ++ch) {
                        const double num = (w0 * c0[ch] + w1 * c1[ch]) + w2 * c2[ch];
                        frame.rgb.data[3 * p + ch] = num * invw;
                    }
                }
            }
        }
    });
    return frame;
}

namespace {

std::vector<double> shaded_vertex_colors(const MorphableBasis& basis,
                                         std::span<const double> texture,
                                         std::span<const double> normals, const Rotation& R,
                                         std::span<const double> gamma) {
    const std::size_t n = basis.vertex_count;
    std::vector<double> colors(3 * n);
    parallel::for_each_index(static_cast<std::int64_t>(n), [&](std::int64_t v) {
        const double* nm = normals.data() + 3 * v;
        const double nx = (R.r[0] * nm[0] + R.r[1] * nm[1]) + R.r[2] * nm[2];
        const double ny = (R.r[3] * nm[0] + R.r[4] * nm[1]) + R.r[5] * nm[2];
        const double nz = (R.r[6] * nm[0] + R.r[7] * nm[1]) + R.r[8] * nm[2];
        double H[9];
        sh_basis(nx, ny, nz, H);
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int b = 0; b < 9; ++b) s += gamma[c * 9 + b] * H[b];
            const double albedo = std::clamp(texture[3 * v + c], 0.0, 1.0);
            colors[3 * v + c] = std::clamp(albedo * s, 0.0, 1.0);
        }
    });
    return colors;
}

void composite_background(RenderedFrame& frame, const Image* background) {
    const std::size_t pixels = frame.coverage.size();
    if (!background) return; // rasterize already left uncovered pixels black
    parallel::for_each_index(static_cast<std::int64_t>(pixels), [&](std::int64_t p) {
        if (frame.coverage[p]) return;
        frame.rgb.data[3 * p + 0] = background->data[3 * p + 0];
        frame.rgb.data[3 * p + 1] = background->data[3 * p + 1];
        frame.rgb.data[3 * p + 2] = background->data[3 * p + 2];
    });
}

} // namespace

RenderedFrame render_face(const MorphableBasis& basis, const CoeffVector& coeffs,
                          const Camera& camera, const Image* background,
                          std::vector<std::int32_t>* tri_ids_out) {
    camera.validate();
    if (background && (background->width != camera.width || background->height != camera.height))
        throw std::invalid_argument("render_face: background size mismatch");
    const std::vector<double> geometry = morph_geometry(basis, coeffs);
    const std::vector<double> texture = morph_texture(basis, coeffs);
    const std::vector<double> normals = vertex_normals(basis, geometry);
    const auto pose = coeffs.pose();
    const Rotation R = rotation_matrix(pose[0], pose[1], pose[2]);
    const std::vector<double> colors =
        shaded_vertex_colors(basis, texture, normals, R, coeffs.illumination());
    const std::vector<ProjectedVertex> projected = project_vertices(geometry, pose, camera);
    RenderedFrame frame = rasterize(projected, basis.triangles, colors, camera.width,
                                    camera.height, tri_ids_out);
    composite_background(frame, background);
    return frame;
}

LandmarkSet project_landmarks(const MorphableBasis& basis, const CoeffVector& coeffs,
                              const Camera& camera) {
    const std::vector<double> geometry = morph_geometry(basis, coeffs);
    const std::vector<ProjectedVertex> projected =
        project_vertices(geometry, coeffs.pose(), camera);
    LandmarkSet out;
    for (int k = 0; k < 68; ++k) {
        const ProjectedVertex& v = projected[basis.landmark_indices[k]];
        if (v.clipped)
            throw degenerate_render_error("landmark " + std::to_string(k) +
                                          " is clipped by the near plane");
        out.points[k] = {v.x, v.y};
    }
    return out;
}

TapeFace render_face_tape(ad::Tape& tape, const MorphableBasis& basis,
                          std::span<const ad::Var> coeff_vars, const Camera& camera,
                          const Image* background) {
    camera.validate();
    if (coeff_vars.size() != coeff::kTotal)
        throw std::invalid_argument("render_face_tape: need 257 coefficient vars");
    if (background && (background->width != camera.width || background->height != camera.height))
        throw std::invalid_argument("render_face_tape: background size mismatch");

    using ad::Var;
    const std::size_t n = basis.vertex_count;
    const std::size_t n3 = 3 * n;
    constexpr int kGeoCols = coeff::kShapeSize + coeff::kExprSize;

    // Morph (one affine node per output row, identical accumulation order to
    // kernels::affine_rows).
    const std::span<const Var> geo_c = coeff_vars.subspan(0, kGeoCols);
    const std::span<const Var> tex_c = coeff_vars.subspan(coeff::kTexOffset, coeff::kTexSize);
    std::vector<Var> geom(n3), tex(n3);
    for (std::size_t i = 0; i < n3; ++i)
        geom[i] = tape.affine(geo_c, basis.geometry_rows.data() + i * kGeoCols,
                              basis.mean_geometry[i]);
    for (std::size_t i = 0; i < n3; ++i)
        tex[i] = tape.affine(tex_c, basis.texture_rows.data() + i * coeff::kTexSize,
                             basis.mean_texture[i]);

    // Face cross products, then per-vertex accumulation in CSR order.
    const std::size_t faces = basis.triangles.size();
    std::vector<Var> face_n(3 * faces);
    for (std::size_t f = 0; f < faces; ++f) {
        const auto& t = basis.triangles[f];
        const Var ax = geom[3 * t[1] + 0] - geom[3 * t[0] + 0];
        const Var ay = geom[3 * t[1] + 1] - geom[3 * t[0] + 1];
        const Var az = geom[3 * t[1] + 2] - geom[3 * t[0] + 2];
        const Var bx = geom[3 * t[2] + 0] - geom[3 * t[0] + 0];
        const Var by = geom[3 * t[2] + 1] - geom[3 * t[0] + 1];
        const Var bz = geom[3 * t[2] + 2] - geom[3 * t[0] + 2];
        face_n[3 * f + 0] = ay * bz - az * by;
        face_n[3 * f + 1] = az * bx - ax * bz;
        face_n[3 * f + 2] = ax * by - ay * bx;
    }

    // Pose and rotation.
    const Var& rx = coeff_vars[coeff::kPoseOffset + 0];
    const Var& ry = coeff_vars[coeff::kPoseOffset + 1];
    const Var& rz = coeff_vars[coeff::kPoseOffset + 2];
    const Var& txv = coeff_vars[coeff::kPoseOffset + 3];
    const Var& tyv = coeff_vars[coeff::kPoseOffset + 4];
    const Var& tzv = coeff_vars[coeff::kPoseOffset + 5];
    const VarRotation R = rotation_vars(rx, ry, rz);

    // Unit normals (camera space) and shaded vertex colors.
    const Var sh0 = tape.constant(kSH0);
    const std::span<const Var> gamma = coeff_vars.subspan(coeff::kIllumOffset, coeff::kIllumSize);
    std::vector<Var> colors(n3);
    for (std::size_t v = 0; v < n; ++v) {
        Var nx = tape.constant(0.0), ny = tape.constant(0.0), nz = tape.constant(0.0);
        for (std::uint32_t k = basis.vertex_face_offsets[v]; k < basis.vertex_face_offsets[v + 1];
             ++k) {
            const std::uint32_t f = basis.vertex_face_ids[k];
            nx = nx + face_n[3 * f + 0];
            ny = ny + face_n[3 * f + 1];
            nz = nz + face_n[3 * f + 2];
        }
        const Var sq = (nx * nx + ny * ny) + nz * nz;
        Var ux, uy, uz;
        if (std::sqrt(sq.value()) < 1e-12) {
            ux = tape.constant(0.0);
            uy = tape.constant(0.0);
            uz = tape.constant(-1.0);
        } else {
            const Var norm = ad::sqrt(sq);
            const Var inv = 1.0 / norm;
            ux = nx * inv;
            uy = ny * inv;
            uz = nz * inv;
        }
        const Var cnx = (R.r[0] * ux + R.r[1] * uy) + R.r[2] * uz;
        const Var cny = (R.r[3] * ux + R.r[4] * uy) + R.r[5] * uz;
        const Var cnz = (R.r[6] * ux + R.r[7] * uy) + R.r[8] * uz;
        Var H[9];
        H[0] = sh0;
        H[1] = kSH1 * cny;
        H[2] = kSH1 * cnz;
        H[3] = kSH1 * cnx;
        H[4] = kSH4 * (cnx * cny);
        H[5] = kSH4 * (cny * cnz);
        H[6] = kSH6 * (3.0 * (cnz * cnz) - 1.0);
        H[7] = kSH4 * (cnx * cnz);
        H[8] = kSH8 * (cnx * cnx - cny * cny);
        for (int c = 0; c < 3; ++c) {
            const Var s = tape.dot_pairs(gamma.subspan(static_cast<std::size_t>(c) * 9, 9),
                                         std::span<const Var>(H, 9));
            const Var albedo = ad::clamp01(tex[3 * v + c]);
            colors[3 * v + c] = ad::clamp01(albedo * s);
        }
    }

    // Rigid transform and projection.
    std::vector<Var> px(n), py(n), invz(n);
    std::vector<ProjectedVertex> projected(n);
    for (std::size_t v = 0; v < n; ++v) {
        const Var& gx = geom[3 * v + 0];
        const Var& gy = geom[3 * v + 1];
        const Var& gz = geom[3 * v + 2];
        const Var X = (R.r[0] * gx + R.r[1] * gy) + R.r[2] * gz + txv;
        const Var Y = (R.r[3] * gx + R.r[4] * gy) + R.r[5] * gz + tyv;
        const Var Z = (R.r[6] * gx + R.r[7] * gy) + R.r[8] * gz + tzv;
        projected[v].depth = Z.value();
        if (Z.value() <= kNearEpsilon) {
            projected[v].clipped = true;
            px[v] = tape.constant(0.0);
            py[v] = tape.constant(0.0);
            invz[v] = tape.constant(0.0);
            continue;
        }
        invz[v] = 1.0 / Z;
        px[v] = camera.focal * X * invz[v] + camera.cx;
        py[v] = camera.focal * Y * invz[v] + camera.cy;
        projected[v].x = px[v].value();
        projected[v].y = py[v].value();
    }

    // Forward rasterization decides coverage and winners; colors recorded per
    // covered pixel against the winner's vertices.
    std::vector<double> color_vals(n3);
    for (std::size_t i = 0; i < n3; ++i) color_vals[i] = colors[i].value();
    TapeFace face;
    face.frame = rasterize(projected, basis.triangles, color_vals, camera.width, camera.height,
                           &face.tri_ids);
    composite_background(face.frame, background);

    const std::size_t pixels = face.frame.coverage.size();
    face.covered.reserve(1024);
    for (std::size_t p = 0; p < pixels; ++p)
        if (face.frame.coverage[p]) face.covered.push_back(static_cast<std::uint32_t>(p));
    face.pixel_rgb.reserve(3 * face.covered.size());

    struct TriCache {
        std::uint32_t idx[3];
        Var ex[3], ey[3]; // oriented edge deltas, edge k opposite vertex k
        bool ready = false;
    };
    std::vector<TriCache> cache(faces);

    for (const std::uint32_t p : face.covered) {
        const int ix = static_cast<int>(p % camera.width);
        const int iy = static_cast<int>(p / camera.width);
        const double cpx = static_cast<double>(ix) + 0.5;
        const double cpy = static_cast<double>(iy) + 0.5;
        const std::int32_t t = face.tri_ids[p];
        TriCache& tc = cache[t];
        if (!tc.ready) {
            const auto& tri = basis.triangles[t];
            const ProjectedVertex& a = projected[tri[0]];
            const ProjectedVertex& b = projected[tri[1]];
            const ProjectedVertex& c = projected[tri[2]];
            const double area2 = edge_value(a.x, a.y, b.x, b.y, c.x, c.y);
            tc.idx[0] = tri[0];
            tc.idx[1] = area2 > 0.0 ? tri[1] : tri[2];
            tc.idx[2] = area2 > 0.0 ? tri[2] : tri[1];
            tc.ex[0] = px[tc.idx[2]] - px[tc.idx[1]];
            tc.ey[0] = py[tc.idx[2]] - py[tc.idx[1]];
            tc.ex[1] = px[tc.idx[0]] - px[tc.idx[2]];
            tc.ey[1] = py[tc.idx[0]] - py[tc.idx[2]];
            tc.ex[2] = px[tc.idx[1]] - px[tc.idx[0]];
            tc.ey[2] = py[tc.idx[1]] - py[tc.idx[0]];
            tc.ready = true;
        }
        // e_k = ex_k*(py - ay_k) - ey_k*(px - ax_k), anchor a_k = vertex k+1.
        Var e[3];
        for (int k = 0; k < 3; ++k) {
            const std::uint32_t a = tc.idx[(k + 1) % 3];
            e[k] = tc.ex[k] * (cpy - py[a]) - tc.ey[k] * (cpx - px[a]);
        }
        const Var w0 = e[0] * invz[tc.idx[0]];
        const Var w1 = e[1] * invz[tc.idx[1]];
        const Var w2 = e[2] * invz[tc.idx[2]];
        const Var wsum = (w0 + w1) + w2;
        const Var invw = 1.0 / wsum;
        for (int ch = 0; ch < 3; ++ch) {
            const Var num = (w0 * colors[3 * tc.idx[0] + ch] + w1 * colors[3 * tc.idx[1] + ch]) +
                            w2 * colors[3 * tc.idx[2] + ch];
            face.pixel_rgb.push_back(num * invw);
        }
    }

    face.landmark_xy.reserve(136);
    for (int k = 0; k < 68; ++k) {
        const std::uint32_t v = basis.landmark_indices[k];
        if (projected[v].clipped)
            throw degenerate_render_error("landmark " + std::to_string(k) +
                                          " is clipped by the near plane");
        face.landmark_xy.push_back(px[v]);
        face.landmark_xy.push_back(py[v]);
    }
    return face;
}

} // namespace facefit
