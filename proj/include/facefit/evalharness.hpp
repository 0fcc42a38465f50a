#pragma once

#include "facefit/dataset.hpp"
#include "facefit/embedder.hpp"
#include "facefit/losses.hpp"
#include "facefit/mm.hpp"
#include "facefit/pipeline.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace facefit {

/// Pluggable image embedder for the evaluation metric. key identifies the
/// image for implementations that look embeddings up rather than compute
/// them.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual Embedding embed(const Image& image, const std::string& key) const = 0;
};

/// Computes embeddings with the deterministic reference projection.
class ReferenceImageEmbedder final : public Embedder {
public:
    explicit ReferenceImageEmbedder(std::uint64_t seed = kDefaultEmbedderSeed)
        : inner_(seed) {}
    Embedding embed(const Image& image, const std::string&) const override {
        return inner_.embed(image);
    }

private:
    ReferenceEmbedder inner_;
};

/// Loads precomputed unit-norm embeddings keyed by image path from a JSON
/// map file; throws io_error for unknown keys.
class ExternalEmbedder final : public Embedder {
public:
    static ExternalEmbedder load(const std::string& path);
    Embedding embed(const Image& image, const std::string& key) const override;

private:
    std::map<std::string, Embedding> table_;
};

/// Euclidean distance between the unit-norm embeddings of two images.
double perceptual_distance(const Embedder& embedder, const Image& a, const Image& b,
                           const std::string& key_a = {}, const std::string& key_b = {});

/// Expression, illumination and pose segments from c_guiding; shape and
/// texture from c_degraded.
CoeffVector swap_coefficients(const CoeffVector& c_degraded, const CoeffVector& c_guiding);

enum class EvalProtocol { kRealUnpaired, kSyntheticPaired, kNoise };
enum class FitterKind { kRogue, kNaive };
enum class GuidanceWarmStart { kZero, kGroundTruth };
enum class RobustWarmStart { kZero, kGuidance };

struct EvalFitterConfig {
    FitterKind kind = FitterKind::kRogue;
    FitOptions fit;              // guidance budget/weights; seed offsets derive from it
    int robust_iterations = -1;  // -1: same as fit.iterations
    GuidanceWarmStart guidance_warm = GuidanceWarmStart::kZero;
    RobustWarmStart robust_warm = RobustWarmStart::kGuidance;
};

struct EvalSampleResult {
    int identity = 0;
    int sample = 0;
    double distance = 0.0;
    bool failed = false;
    std::string error;
};

struct EvalReport {
    std::string protocol;
    bool swap_applied = false;
    std::string fitter;
    std::vector<EvalSampleResult> samples;
    std::vector<double> per_identity_mean; // NaN-free: identities with no
                                           // successful sample carry 0 and are
                                           // flagged in failures
    double overall_mean = 0.0;
    double overall_std = 0.0; // population
    std::size_t failures = 0;
    std::string config_hash;
};

const char* to_string(EvalProtocol protocol);

/// Algorithm-1 style evaluation over a manifest: fit the clean image once per
/// identity, fit each degraded image, swap segments when the protocol is
/// unpaired, render over the guiding background, embed and accumulate
/// distances. Per-sample failures are recorded and excluded from the means.
EvalReport evaluate_dataset(const Manifest& manifest, const std::string& manifest_dir,
                            const MorphableBasis& basis, EvalProtocol protocol,
                            const EvalFitterConfig& fitter, const Embedder& embedder,
                            const std::string& config_hash);

std::string report_csv(const EvalReport& report);
std::string report_summary_json(const EvalReport& report);

/// Single-branch robustification fit used per degraded sample: same objective
/// as fit_robust restricted to the occlusion branch.
CoeffVector fit_robust_one(FitSession& session, int iterations, RobustWarmStart warm);

} // namespace facefit
