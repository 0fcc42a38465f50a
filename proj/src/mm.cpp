#include "facefit/mm.hpp"

#include "facefit/kernels.hpp"
#include "facefit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace facefit {

bool CoeffVector::finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

void LossWeights::validate() const {
    const double all[] = {alpha_k, alpha_gp, alpha_p, alpha_r, beta_o, beta_n,
                          beta_c,  w_s,      w_t,     w_e,     huber_delta};
    for (double w : all)
        if (!(w >= 0.0) || !std::isfinite(w))
            throw std::invalid_argument("loss weights must be nonnegative and finite");
    if (huber_delta <= 0.0) throw std::invalid_argument("huber_delta must be positive");
}

void MorphableBasis::finalize() {
    const std::size_t n3 = 3 * static_cast<std::size_t>(vertex_count);
    if (vertex_count == 0) throw std::invalid_argument("basis has no vertices");
    if (mean_geometry.size() != n3 || mean_texture.size() != n3)
        throw std::invalid_argument("basis mean vector length mismatch");
    if (shape_basis.size() != n3 * coeff::kShapeSize ||
        expression_basis.size() != n3 * coeff::kExprSize ||
        texture_basis.size() != n3 * coeff::kTexSize)
        throw std::invalid_argument("basis column count mismatch");
    for (const auto& t : triangles)
        for (std::uint32_t idx : t)
            if (idx >= vertex_count) throw std::invalid_argument("triangle index out of range");
    for (std::uint32_t idx : landmark_indices)
        if (idx >= vertex_count) throw std::invalid_argument("landmark index out of range");
    for (double v : mean_texture)
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("mean texture outside [0,1]");

    constexpr int kGeoCols = coeff::kShapeSize + coeff::kExprSize;
    geometry_rows.assign(n3 * kGeoCols, 0.0);
    texture_rows.assign(n3 * coeff::kTexSize, 0.0);
    for (std::size_t i = 0; i < n3; ++i) {
        double* row = geometry_rows.data() + i * kGeoCols;
        for (int c = 0; c < coeff::kShapeSize; ++c) row[c] = shape_basis[c * n3 + i];
        for (int c = 0; c < coeff::kExprSize; ++c)
            row[coeff::kShapeSize + c] = expression_basis[c * n3 + i];
        double* trow = texture_rows.data() + i * coeff::kTexSize;
        for (int c = 0; c < coeff::kTexSize; ++c) trow[c] = texture_basis[c * n3 + i];
    }

    // CSR adjacency, faces listed per vertex in ascending face id so normal
    // accumulation has one fixed order no matter how it is parallelized.
    vertex_face_offsets.assign(vertex_count + 1, 0);
    for (const auto& t : triangles)
        for (std::uint32_t idx : t) ++vertex_face_offsets[idx + 1];
    for (std::size_t v = 1; v <= vertex_count; ++v)
        vertex_face_offsets[v] += vertex_face_offsets[v - 1];
    vertex_face_ids.assign(vertex_face_offsets.back(), 0);
    std::vector<std::uint32_t> cursor(vertex_face_offsets.begin(), vertex_face_offsets.end() - 1);
    for (std::uint32_t f = 0; f < triangles.size(); ++f)
        for (std::uint32_t idx : triangles[f]) vertex_face_ids[cursor[idx]++] = f;
}

namespace {

// Ellipsoid cap the face patch lives on.
constexpr double kAxisX = 0.78;
constexpr double kAxisY = 1.0;
constexpr double kAxisZ = 0.68;
constexpr double kLatSpan = 1.7; // radians
constexpr double kLonSpan = 1.7;

struct Grid {
    std::vector<std::uint32_t> row_start; // size rows+1
    int rows = 0;
};

Grid plan_grid(std::uint32_t n) {
    Grid g;
    g.rows = std::max(2, static_cast<int>(std::lround(std::sqrt(static_cast<double>(n) * 1.25))));
    // No row may be shorter than 2 vertices.
    while (g.rows > 2 && n / static_cast<std::uint32_t>(g.rows) < 2) --g.rows;
    const std::uint32_t base = n / static_cast<std::uint32_t>(g.rows);
    const std::uint32_t rem = n % static_cast<std::uint32_t>(g.rows);
    g.row_start.assign(static_cast<std::size_t>(g.rows) + 1, 0);
    for (int r = 0; r < g.rows; ++r)
        g.row_start[r + 1] =
            g.row_start[r] + base + (static_cast<std::uint32_t>(r) < rem ? 1u : 0u);
    return g;
}

double row_param(const Grid& g, int row, std::uint32_t j) {
    const std::uint32_t len = g.row_start[row + 1] - g.row_start[row];
    return len == 1 ? 0.5 : static_cast<double>(j) / static_cast<double>(len - 1);
}

void surface_point(double u, double v, double* out) {
    const double lat = (v - 0.5) * kLatSpan;
    const double lon = (u - 0.5) * kLonSpan;
    out[0] = kAxisX * std::cos(lat) * std::sin(lon);
    out[1] = kAxisY * std::sin(lat);
    out[2] = -kAxisZ * std::cos(lat) * std::cos(lon);
}

// Zips two vertex rows into a triangle strip, advancing whichever side has
// the smaller next parameter. Handles rows of different lengths.
void zip_rows(const Grid& g, int row, std::vector<std::array<std::uint32_t, 3>>& tris) {
    const std::uint32_t a0 = g.row_start[row], a1 = g.row_start[row + 1];
    const std::uint32_t b0 = a1, b1 = g.row_start[row + 2];
    std::uint32_t a = 0, b = 0;
    const std::uint32_t na = a1 - a0, nb = b1 - b0;
    while (a + 1 < na || b + 1 < nb) {
        bool advance_a;
        if (a + 1 >= na)
            advance_a = false;
        else if (b + 1 >= nb)
            advance_a = true;
        else
            advance_a = row_param(g, row, a + 1) <= row_param(g, row + 1, b + 1);
        if (advance_a) {
            tris.push_back({a0 + a, b0 + b, a0 + a + 1});
            ++a;
        } else {
            tris.push_back({a0 + a, b0 + b, b0 + b + 1});
            ++b;
        }
    }
}

// One smooth displacement field: a few random sinusoidal waves with the
// spatial frequency ramping up for later columns.
void fill_smooth_field(std::span<double> column, std::span<const double> positions,
                       Rng& rng, int col_index, int cols) {
    std::fill(column.begin(), column.end(), 0.0);
    const std::size_t n = positions.size() / 3;
    const double ramp = static_cast<double>(col_index) / std::max(1, cols - 1);
    const double amplitude = std::pow(1.0 + col_index, -0.6);
    for (int wave = 0; wave < 4; ++wave) {
        const double freq = (0.9 + 2.6 * ramp) * 3.141592653589793 * rng.uniform(0.6, 1.0);
        double wx = rng.normal(), wy = rng.normal(), wz = rng.normal();
        const double wn = std::sqrt(wx * wx + wy * wy + wz * wz) + 1e-12;
        wx *= freq / wn;
        wy *= freq / wn;
        wz *= freq / wn;
        const double phase = rng.uniform(0.0, 6.283185307179586);
        double ux = rng.normal(), uy = rng.normal(), uz = rng.normal();
        const double un = std::sqrt(ux * ux + uy * uy + uz * uz) + 1e-12;
        ux /= un;
        uy /= un;
        uz /= un;
        for (std::size_t vtx = 0; vtx < n; ++vtx) {
            const double* p = positions.data() + 3 * vtx;
            const double s = amplitude * std::sin(wx * p[0] + wy * p[1] + wz * p[2] + phase);
            column[3 * vtx + 0] += s * ux;
            column[3 * vtx + 1] += s * uy;
            column[3 * vtx + 2] += s * uz;
        }
    }
}

// Modified Gram-Schmidt, two passes per column, then normalization.
void orthonormalize_columns(std::vector<double>& m, std::size_t rows, int cols,
                            std::uint64_t rescue_seed) {
    for (int c = 0; c < cols; ++c) {
        std::span<double> col(m.data() + static_cast<std::size_t>(c) * rows, rows);
        for (int pass = 0; pass < 2; ++pass) {
            for (int prev = 0; prev < c; ++prev) {
                std::span<const double> pcol(m.data() + static_cast<std::size_t>(prev) * rows,
                                             rows);
                const double proj = kernels::dot(col, pcol);
                kernels::add_scaled(col, -proj, pcol);
            }
        }
        double norm = std::sqrt(kernels::dot(col, col));
        if (norm < 1e-10) {
            // Degenerate field; replace with hash noise and redo this column.
            for (std::size_t i = 0; i < rows; ++i)
                col[i] = hash_normal(rescue_seed + static_cast<std::uint64_t>(c) * 0x10001u, i);
            --c;
            continue;
        }
        for (std::size_t i = 0; i < rows; ++i) col[i] /= norm;
    }
}

void build_basis_block(std::vector<double>& out, std::size_t n3, int cols,
                       std::span<const double> positions, std::uint64_t seed,
                       std::uint64_t stream) {
    out.assign(n3 * static_cast<std::size_t>(cols), 0.0);
    for (int c = 0; c < cols; ++c) {
        Rng rng(substream(substream(seed, stream), static_cast<std::uint64_t>(c)));
        fill_smooth_field({out.data() + static_cast<std::size_t>(c) * n3, n3}, positions, rng, c,
                          cols);
    }
    orthonormalize_columns(out, n3, cols, substream(seed, stream ^ 0xF00Dull));
}

} // namespace

MorphableBasis generate_synthetic_basis(std::uint32_t vertex_count, std::uint64_t seed) {
    if (vertex_count < 68)
        throw std::invalid_argument("vertex_count must be at least 68 (need 68 distinct landmarks), got " +
                                    std::to_string(vertex_count));

    MorphableBasis basis;
    basis.vertex_count = vertex_count;
    basis.basis_seed = seed;
    const std::size_t n3 = 3 * static_cast<std::size_t>(vertex_count);

    const Grid grid = plan_grid(vertex_count);
    basis.mean_geometry.resize(n3);
    for (int r = 0; r < grid.rows; ++r) {
        const double v = grid.rows == 1 ? 0.5 : static_cast<double>(r) / (grid.rows - 1);
        for (std::uint32_t j = grid.row_start[r]; j < grid.row_start[r + 1]; ++j)
            surface_point(row_param(grid, r, j - grid.row_start[r]), v,
                          basis.mean_geometry.data() + 3 * j);
    }

    for (int r = 0; r + 1 < grid.rows; ++r) zip_rows(grid, r, basis.triangles);

    // Wind every triangle so its normal points toward -z (toward the camera
    // once the face is posed in front of it).
    for (auto& t : basis.triangles) {
        const double* p0 = basis.mean_geometry.data() + 3 * t[0];
        const double* p1 = basis.mean_geometry.data() + 3 * t[1];
        const double* p2 = basis.mean_geometry.data() + 3 * t[2];
        const double ex0 = p1[0] - p0[0], ey0 = p1[1] - p0[1];
        const double ex1 = p2[0] - p0[0], ey1 = p2[1] - p0[1];
        const double ez0 = p1[2] - p0[2], ez1 = p2[2] - p0[2];
        const double nz = ex0 * ey1 - ey0 * ex1;
        (void)ez0;
        (void)ez1;
        if (nz > 0.0) std::swap(t[1], t[2]);
    }

    // Smooth skin-like mean albedo, kept inside [0,1].
    basis.mean_texture.resize(n3);
    for (std::uint32_t vtx = 0; vtx < vertex_count; ++vtx) {
        const double* p = basis.mean_geometry.data() + 3 * vtx;
        const double wobble = 0.06 * std::sin(2.3 * p[0] + 1.1) * std::cos(1.7 * p[1] - 0.4);
        const double shade = 0.05 * std::sin(3.1 * p[1] + 0.7);
        basis.mean_texture[3 * vtx + 0] = std::clamp(0.80 + wobble, 0.0, 1.0);
        basis.mean_texture[3 * vtx + 1] = std::clamp(0.62 + wobble + shade, 0.0, 1.0);
        basis.mean_texture[3 * vtx + 2] = std::clamp(0.52 + wobble - shade, 0.0, 1.0);
    }

    build_basis_block(basis.shape_basis, n3, coeff::kShapeSize, basis.mean_geometry, seed, 1);
    build_basis_block(basis.expression_basis, n3, coeff::kExprSize, basis.mean_geometry, seed, 2);
    build_basis_block(basis.texture_basis, n3, coeff::kTexSize, basis.mean_geometry, seed, 3);

    for (int k = 0; k < 68; ++k)
        basis.landmark_indices[k] = static_cast<std::uint32_t>(
            std::lround(static_cast<double>(k) * (vertex_count - 1) / 67.0));

    basis.finalize();
    return basis;
}

std::vector<double> morph_geometry(const MorphableBasis& basis, const CoeffVector& coeffs) {
    const std::size_t n3 = 3 * static_cast<std::size_t>(basis.vertex_count);
    if (basis.geometry_rows.size() != n3 * (coeff::kShapeSize + coeff::kExprSize))
        throw std::invalid_argument("basis not finalized or dimension mismatch");
    std::vector<double> out(n3);
    kernels::affine_rows(out, basis.mean_geometry, basis.geometry_rows,
                         coeff::kShapeSize + coeff::kExprSize,
                         {coeffs.values.data(), coeff::kShapeSize + coeff::kExprSize});
    return out;
}

std::vector<double> morph_texture(const MorphableBasis& basis, const CoeffVector& coeffs) {
    const std::size_t n3 = 3 * static_cast<std::size_t>(basis.vertex_count);
    if (basis.texture_rows.size() != n3 * coeff::kTexSize)
        throw std::invalid_argument("basis not finalized or dimension mismatch");
    std::vector<double> out(n3);
    kernels::affine_rows(out, basis.mean_texture, basis.texture_rows, coeff::kTexSize,
                         coeffs.texture());
    return out;
}

double regularization_loss(const CoeffVector& coeffs, const LossWeights& weights) {
    double ss = 0.0, st = 0.0, se = 0.0;
    for (double v : coeffs.shape()) ss += v * v;
    for (double v : coeffs.texture()) st += v * v;
    for (double v : coeffs.expression()) se += v * v;
    return weights.w_s * ss + weights.w_t * st + weights.w_e * se;
}

} // namespace facefit
