#pragma once

#include "facefit/dataset.hpp"
#include "facefit/mm.hpp"
#include "facefit/pipeline.hpp"
#include "facefit/render.hpp"

#include <cstdint>
#include <string>

namespace facefit {

/// Full run configuration: defaults, overridden by a JSON config file,
/// overridden by CLI flags. Unknown keys in the file are rejected.
struct RunConfig {
    // basis
    std::string basis_path;
    std::uint32_t basis_vertices = 500;
    std::uint64_t basis_seed = 7;
    // camera
    Camera camera{64.0, 32.0, 32.0, 64, 64};
    // loss weights (alpha_k carries the fitting profile's value rather than
    // the published constant; see pipeline.hpp)
    LossWeights weights;
    // fitter
    int iterations = 600;
    int robust_iterations = -1; // -1: same as iterations
    double lr = 2e-2;
    double lr_final_frac = 0.02;
    double robust_lr = 1e-3;
    double disc_lr = 1e-8;
    std::string consistency = "adversarial"; // adversarial | l2
    bool use_discriminator = true;
    bool polish = true;
    std::string guidance_warm = "zero"; // zero | ground_truth
    std::string robust_warm = "guidance"; // zero | guidance

    RunConfig() { weights.alpha_k = kFitLandmarkWeight; }
    // dataset
    DatasetParams dataset;
    // eval
    std::string protocol = "synthetic_paired"; // real_unpaired | synthetic_paired | noise
    std::string eval_fitter = "rogue";         // rogue | naive
    std::string embedder = "reference";        // reference | external
    std::string embeddings_path;
    std::uint64_t embedder_seed = 101;
    // global
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    int threads = 0;

    void validate() const; // throws std::invalid_argument
};

/// Applies a JSON config file on top of cfg. Unknown keys anywhere raise
/// std::invalid_argument naming the key.
void apply_config_file(RunConfig& cfg, const std::string& path);

/// Canonical (sorted-key, whitespace-free) serialization of the semantically
/// meaningful fields; threads and output paths are excluded.
std::string canonical_config(const RunConfig& cfg);

/// 64-bit FNV-1a hex digest of canonical_config.
std::string config_hash(const RunConfig& cfg);

} // namespace facefit
