#pragma once

#include "facefit/degrade.hpp"
#include "facefit/embedder.hpp"
#include "facefit/losses.hpp"
#include "facefit/mm.hpp"
#include "facefit/optim.hpp"
#include "facefit/render.hpp"
#include "facefit/tape.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace facefit {

/// Depth the canonical initialization places the face at; fills roughly two
/// thirds of the default 64x64 frame.
inline constexpr double kCanonicalDepth = 2.9;

/// SH band-0 value the canonical initialization starts illumination at. A
/// zero-illumination start renders black, which zeroes the texture gradient
/// and drives albedo into the clamp where it can never recover.
inline constexpr double kCanonicalIllumination = 3.2;

/// Landmark weight used by the fitting profile. The published guide-loss
/// weights assume full-scale landmark terms (squared distances at 224x224);
/// with this library's mean linear pixel distance at 64x64 the same
/// geometric pull needs roughly 30x the published constant.
inline constexpr double kFitLandmarkWeight = 0.05;

enum class ConsistencyMode { kAdversarial, kL2 };

struct FitOptions {
    int iterations = 600;
    double lr = 2e-2;            // coefficient step size at iteration 0
    double lr_final_frac = 0.02; // cosine-decays to lr * this
    double robust_lr = 1e-3;     // robustification steps start warm at c_g
    double disc_lr = 1e-8;
    std::uint64_t seed = 0;
    LossWeights weights;
    ConsistencyMode consistency = ConsistencyMode::kAdversarial;
    bool use_discriminator = true;
    double disc_init_scale = 0.05;
    // Derivative-free boundary polish after the Adam loop (guidance only).
    // First-order steps cannot cross rasterization coverage flips; the polish
    // pattern-searches pose/shape on the exact objective to shed silhouette
    // pixels that landed on the background.
    bool polish = true;
    int polish_hops = 8;

    FitOptions() { weights.alpha_k = kFitLandmarkWeight; }
};

struct HistoryRow {
    int iteration = 0;
    char phase = 'G'; // 'G' guidance, 'R' robustification
    double l_k = 0.0, l_gp = 0.0, l_p = 0.0, l_r = 0.0;
    double l_o = 0.0, l_n = 0.0, l_c = 0.0;
    double total = 0.0;
};

/// All state for fitting one triplet. Sessions are independent; run as many
/// concurrently as you like, but each one is single-threaded inside.
struct FitSession {
    const MorphableBasis* basis = nullptr;
    const ReferenceEmbedder* embedder = nullptr;
    Camera camera;
    Image guiding;
    std::optional<Image> occluded;
    std::optional<Image> noisy;
    std::optional<LandmarkSet> target_landmarks;
    FitOptions options;

    CoeffVector c_g, c_o, c_n;
    Discriminator disc;
    bool guidance_done = false;
    std::vector<HistoryRow> history;

    ad::Tape tape;      // coefficient-step recordings
    ad::Tape disc_tape; // discriminator-step recordings
};

/// Shared default embedder instance.
const ReferenceEmbedder& default_embedder();

/// Zero coefficients with the pose translation set to the canonical
/// face-filling depth.
CoeffVector initial_coefficients();

FitSession make_session(const MorphableBasis& basis, const Camera& camera, Image guiding,
                        FitOptions options);

/// Guidance pipeline: per-iteration render of the guiding estimate, landmark
/// + photometric + perceptual + regularization losses, Adam on c_g. Requires
/// target landmarks. Returns the fitted c_g (also stored on the session).
CoeffVector fit_guidance(FitSession& session);

/// Robustification pipeline. Requires fit_guidance to have completed; c_g is
/// frozen. c_o and c_n start at c_g (the per-image analogue of the shared
/// estimator carrying the guidance experience into the robust branch) and
/// take one Adam step per iteration against
/// beta_o*L_O + beta_n*L_N - beta_c*L_C, followed by one discriminator step
/// against L_C (adversarial mode). The L2 mode replaces L_C with
/// |c_g-c_o|^2 + |c_g-c_n|^2 added as a penalty and trains no discriminator.
std::pair<CoeffVector, CoeffVector> fit_robust(FitSession& session);

/// Photometric-only fit of a single image (the naive baseline).
CoeffVector fit_photometric(const MorphableBasis& basis, const Camera& camera,
                            const Image& target, const FitOptions& options);

/// Fraction of vectors whose argmax logit matches their one-hot label;
/// argmax ties resolve to index 0.
double discriminator_accuracy(const Discriminator& disc, std::span<const CoeffVector> guiding,
                              std::span<const CoeffVector> robust);

/// Fits a discriminator on frozen coefficient sets (diagnostic; used to show
/// the sets are separable when nothing fights back).
void train_discriminator(Discriminator& disc, std::span<const CoeffVector> guiding,
                         std::span<const CoeffVector> robust, int steps, double lr, double delta);

// ---- Amortized regressor ----------------------------------------------------

/// Tiny shared-weight coefficient network: 32x32 grayscale -> 256 hidden
/// (leaky rectifier 0.2) -> 257 offsets added to the canonical
/// initialization.
struct AmortizedRegressor {
    std::vector<double> w1; // 256 x 1024
    std::vector<double> b1; // 256
    std::vector<double> w2; // 257 x 256
    std::vector<double> b2; // 257
    double leaky_slope = 0.2;

    static constexpr int kIn = 1024;
    static constexpr int kHidden = 256;
    static constexpr int kOut = coeff::kTotal;

    static AmortizedRegressor seeded(std::uint64_t seed);
    std::size_t param_count() const;
    void pack_params(std::span<double> out) const;
    void unpack_params(std::span<const double> in);

    CoeffVector predict(const Image& image) const;
};

struct AmortizedTrainStats {
    int optimizer_steps = 0;
    double initial_guidance_loss = 0.0;
    double final_guidance_loss = 0.0;
};

struct AmortizedTrainOptions {
    int epochs = 1;
    int batch_triplets = 5; // 5 clean + 5 occluded + 5 noisy images per step
    double lr = 1e-4;
    double disc_lr = 1e-8;
    std::uint64_t seed = 0;
    LossWeights weights;
};

/// Mini-batch training: guidance losses on clean predictions, occlusion/noise
/// photometric regression against the guiding image plus adversarial
/// consistency against the frozen clean predictions on degraded ones.
AmortizedTrainStats train_amortized(AmortizedRegressor& regressor,
                                    std::span<const TripletSample> dataset,
                                    const MorphableBasis& basis, const Camera& camera,
                                    const AmortizedTrainOptions& options);

} // namespace facefit
