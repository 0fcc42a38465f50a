#include "facefit/embedder.hpp"

#include "facefit/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace facefit {

namespace {

constexpr int kGrid = 32;

inline double luma(const double* rgb) {
    return (0.299 * rgb[0] + 0.587 * rgb[1]) + 0.114 * rgb[2];
}

} // namespace

std::vector<double> gray_cells_32(const Image& image) {
    if (image.width <= 0 || image.height <= 0)
        throw std::invalid_argument("gray_cells_32: empty image");
    std::vector<double> cells(kGrid * kGrid, 0.0);
    for (int cy = 0; cy < kGrid; ++cy) {
        const int y0 = cy * image.height / kGrid;
        const int y1 = (cy + 1) * image.height / kGrid;
        for (int cx = 0; cx < kGrid; ++cx) {
            const int x0 = cx * image.width / kGrid;
            const int x1 = (cx + 1) * image.width / kGrid;
            double acc = 0.0;
            int count = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    acc = acc + luma(image.data.data() +
                                     (static_cast<std::size_t>(y) * image.width + x) * 3);
                    ++count;
                }
            cells[cy * kGrid + cx] = count > 0 ? acc / static_cast<double>(count) : 0.0;
        }
    }
    return cells;
}

ReferenceEmbedder::ReferenceEmbedder(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {
    if (dim <= 0) throw std::invalid_argument("embedder dim must be positive");
    projection_.resize(static_cast<std::size_t>(dim) * kGrid * kGrid);
    const std::uint64_t stream = substream(seed, 0xE3BEDull);
    for (std::size_t i = 0; i < projection_.size(); ++i)
        projection_[i] = hash_normal(stream, i);
}

Embedding ReferenceEmbedder::embed(const Image& image) const {
    const std::vector<double> cells = gray_cells_32(image);
    Embedding out;
    out.values.resize(dim_);
    for (int k = 0; k < dim_; ++k) {
        const double* row = projection_.data() + static_cast<std::size_t>(k) * kGrid * kGrid;
        double f = 0.0;
        for (int j = 0; j < kGrid * kGrid; ++j) f += row[j] * cells[j];
        out.values[k] = f;
    }
    double nrm2 = 0.0;
    for (int k = 0; k < dim_; ++k) nrm2 += out.values[k] * out.values[k];
    if (nrm2 == 0.0) throw std::runtime_error("embed: degenerate zero feature vector");
    const double inv = 1.0 / std::sqrt(nrm2);
    for (int k = 0; k < dim_; ++k) out.values[k] = out.values[k] * inv;
    return out;
}

std::vector<ad::Var> ReferenceEmbedder::embed_tape(ad::Tape& tape, const TapeFace& face) const {
    using ad::Var;
    const Image& img = face.frame.rgb;
    std::vector<std::int32_t> covered_index(img.pixel_count(), -1);
    for (std::size_t i = 0; i < face.covered.size(); ++i)
        covered_index[face.covered[i]] = static_cast<std::int32_t>(i);

    std::vector<Var> cell_sums(kGrid * kGrid);
    std::vector<Var> gray_scratch;
    std::vector<double> ones_scratch;
    for (int cy = 0; cy < kGrid; ++cy) {
        const int y0 = cy * img.height / kGrid;
        const int y1 = (cy + 1) * img.height / kGrid;
        for (int cx = 0; cx < kGrid; ++cx) {
            const int x0 = cx * img.width / kGrid;
            const int x1 = (cx + 1) * img.width / kGrid;
            gray_scratch.clear();
            double const_part = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * img.width + x;
                    const std::int32_t ci = covered_index[p];
                    if (ci >= 0) {
                        const Var& r = face.pixel_rgb[3 * ci + 0];
                        const Var& g = face.pixel_rgb[3 * ci + 1];
                        const Var& b = face.pixel_rgb[3 * ci + 2];
                        gray_scratch.push_back((0.299 * r + 0.587 * g) + 0.114 * b);
                    } else {
                        const_part = const_part + luma(img.data.data() + 3 * p);
                    }
                }
            ones_scratch.assign(gray_scratch.size(), 1.0);
            cell_sums[cy * kGrid + cx] = tape.weighted_sum(gray_scratch, ones_scratch, const_part);
        }
    }
    // Second pass so the per-cell means are contiguous nodes the projection
    // rows can address as one affine each.
    std::vector<Var> cells(kGrid * kGrid);
    for (int cy = 0; cy < kGrid; ++cy) {
        const int y0 = cy * img.height / kGrid;
        const int y1 = (cy + 1) * img.height / kGrid;
        for (int cx = 0; cx < kGrid; ++cx) {
            const int x0 = cx * img.width / kGrid;
            const int x1 = (cx + 1) * img.width / kGrid;
            const int count = (y1 - y0) * (x1 - x0);
            cells[cy * kGrid + cx] = count > 0
                                         ? cell_sums[cy * kGrid + cx] / static_cast<double>(count)
                                         : tape.constant(0.0);
        }
    }
    std::vector<Var> feats(dim_);
    for (int k = 0; k < dim_; ++k)
        feats[k] = tape.affine(cells, projection_.data() + static_cast<std::size_t>(k) * kGrid * kGrid,
                               0.0);
    const Var nrm2 = tape.dot_pairs(feats, feats);
    const Var inv = 1.0 / ad::sqrt(nrm2);
    std::vector<Var> out(dim_);
    for (int k = 0; k < dim_; ++k) out[k] = feats[k] * inv;
    return out;
}

} // namespace facefit
