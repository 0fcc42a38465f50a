#pragma once

#include "facefit/losses.hpp"
#include "facefit/render.hpp"
#include "facefit/tape.hpp"

#include <cstdint>
#include <vector>

namespace facefit {

inline constexpr std::uint64_t kDefaultEmbedderSeed = 101;
inline constexpr int kEmbeddingDim = 128;

/// 32x32 grayscale box downsample shared by the embedder and the amortized
/// regressor input.
std::vector<double> gray_cells_32(const Image& image);

/// Deterministic image embedder: grayscale, 32x32 box downsample, fixed
/// seeded Gaussian projection, L2 normalization. Stands in for a pretrained
/// recognition network wherever one is called for.
class ReferenceEmbedder {
public:
    explicit ReferenceEmbedder(std::uint64_t seed = kDefaultEmbedderSeed, int dim = kEmbeddingDim);

    Embedding embed(const Image& image) const;

    /// Records the embedding of a tape-rendered frame. Covered pixels
    /// contribute through their recorded colors; background pixels enter as
    /// constants. Returns dim unit-normalized Vars.
    std::vector<ad::Var> embed_tape(ad::Tape& tape, const TapeFace& face) const;

    int dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    int dim_;
    std::vector<double> projection_; // dim x 1024, row-major
};

} // namespace facefit
