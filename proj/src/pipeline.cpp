#include "facefit/pipeline.hpp"

#include "facefit/errors.hpp"
#include "facefit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace facefit {

namespace {

constexpr double kPi = 3.141592653589793;

double cosine_lr(const FitOptions& o, int iteration) {
    if (o.iterations <= 1) return o.lr;
    const double lo = o.lr * o.lr_final_frac;
    const double t = static_cast<double>(iteration) / static_cast<double>(o.iterations - 1);
    return lo + (o.lr - lo) * 0.5 * (1.0 + std::cos(kPi * t));
}

ad::Var perceptual_tape(ad::Tape& tape, const ReferenceEmbedder& embedder, const TapeFace& face,
                        const Embedding& target) {
    const std::vector<ad::Var> theta = embedder.embed_tape(tape, face);
    const ad::Var cosv = tape.affine(theta, target.values.data(), 0.0);
    return 1.0 - cosv;
}

void check_finite(const CoeffVector& c, const char* what, int iteration) {
    if (!c.finite())
        throw degenerate_render_error(std::string(what) + " diverged to non-finite values at iteration " +
                                      std::to_string(iteration));
}

double guidance_objective(const FitSession& s, const Embedding& theta_target,
                          const CoeffVector& c) {
    const LossWeights& w = s.options.weights;
    const RenderedFrame f = render_face(*s.basis, c, s.camera, &s.guiding);
    const double l_k =
        landmark_loss(project_landmarks(*s.basis, c, s.camera), *s.target_landmarks);
    const double l_gp = photometric_loss(f, s.guiding);
    const double l_p = perceptual_loss(theta_target, s.embedder->embed(f.rgb));
    const double l_r = regularization_loss(c, w);
    return guide_total(l_k, l_gp, l_p, l_r, w);
}

double max_covered_distance(const FitSession& s, const CoeffVector& c) {
    const RenderedFrame f = render_face(*s.basis, c, s.camera, nullptr);
    double worst = 0.0;
    for (std::size_t p = 0; p < f.coverage.size(); ++p) {
        if (!f.coverage[p]) continue;
        double d2 = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            const double d = f.rgb.data[3 * p + ch] - s.guiding.data[3 * p + ch];
            d2 += d * d;
        }
        worst = std::max(worst, d2);
    }
    return std::sqrt(worst);
}

// Pattern search on the exact guidance objective. Adam cannot cross a
// rasterization coverage flip (the loss jump is invisible to the frozen
// gradient), so boundary pixels that landed on the background are shed here:
// coordinate sweeps first, then seeded jitter restarts for ridge crossings.
void polish_guidance(FitSession& s, const Embedding& theta_target) {
    CoeffVector& c = s.c_g;
    double best = guidance_objective(s, theta_target, c);

    const auto sweep = [&](std::span<const int> coords, double step0, int rounds) {
        double step = step0;
        for (int round = 0; round < rounds; ++round) {
            bool improved = false;
            for (int k : coords) {
                for (double sign : {+1.0, -1.0}) {
                    CoeffVector probe = c;
                    probe.values[k] += sign * step;
                    const double v = guidance_objective(s, theta_target, probe);
                    if (v < best) {
                        best = v;
                        c = probe;
                        improved = true;
                        break;
                    }
                }
            }
            if (!improved) step *= 0.5;
            if (step < 1e-7 * step0) break;
        }
    };

    std::vector<int> pose_coords;
    for (int k = 0; k < coeff::kPoseSize; ++k) pose_coords.push_back(coeff::kPoseOffset + k);
    std::vector<int> geo_coords = pose_coords;
    for (int k = 0; k < coeff::kShapeSize; ++k) geo_coords.push_back(k);
    for (int k = 0; k < coeff::kExprSize; ++k) geo_coords.push_back(coeff::kExprOffset + k);

    sweep(pose_coords, 2e-3, 60);
    sweep(geo_coords, 0.03, 12);
    sweep(geo_coords, 0.008, 10);
    sweep(pose_coords, 5e-4, 40);

    Rng hop_rng(substream(s.options.seed, 0xB0Bull));
    for (int hop = 0; hop < s.options.polish_hops; ++hop) {
        if (max_covered_distance(s, c) < 0.3) break;
        const CoeffVector saved = c;
        const double saved_best = best;
        for (int k = 0; k < coeff::kPoseSize; ++k)
            c.values[coeff::kPoseOffset + k] += 1.5e-3 * hop_rng.normal();
        for (int k = 0; k < coeff::kShapeSize; ++k) c.values[k] += 0.01 * hop_rng.normal();
        best = guidance_objective(s, theta_target, c);
        sweep(pose_coords, 1e-3, 30);
        sweep(geo_coords, 0.01, 6);
        if (best >= saved_best) {
            c = saved;
            best = saved_best;
        }
    }
    sweep(pose_coords, 3e-4, 30);
}

} // namespace

const ReferenceEmbedder& default_embedder() {
    static const ReferenceEmbedder embedder;
    return embedder;
}

CoeffVector initial_coefficients() {
    CoeffVector c;
    c.values[coeff::kPoseOffset + 5] = kCanonicalDepth;
    c.values[coeff::kIllumOffset + 0] = kCanonicalIllumination;
    c.values[coeff::kIllumOffset + 9] = kCanonicalIllumination;
    c.values[coeff::kIllumOffset + 18] = kCanonicalIllumination;
    return c;
}

FitSession make_session(const MorphableBasis& basis, const Camera& camera, Image guiding,
                        FitOptions options) {
    options.weights.validate();
    camera.validate();
    FitSession s;
    s.basis = &basis;
    s.embedder = &default_embedder();
    s.camera = camera;
    s.guiding = std::move(guiding);
    s.options = options;
    s.c_g = s.c_o = s.c_n = initial_coefficients();
    s.disc = options.use_discriminator
                 ? Discriminator::seeded(substream(options.seed, 0xD15Cull), options.disc_init_scale)
                 : Discriminator::zeros();
    return s;
}

CoeffVector fit_guidance(FitSession& s) {
    if (!s.basis) throw std::invalid_argument("fit_guidance: session has no basis");
    if (!s.target_landmarks)
        throw std::invalid_argument("fit_guidance: target landmarks are required");
    if (s.guiding.width != s.camera.width || s.guiding.height != s.camera.height)
        throw std::invalid_argument("fit_guidance: guiding image size mismatch");
    const LossWeights& w = s.options.weights;
    const Embedding theta_target = s.embedder->embed(s.guiding);

    AdamState adam(coeff::kTotal, {.lr = s.options.lr});
    std::vector<ad::Var> cv(coeff::kTotal);
    for (int it = 0; it < s.options.iterations; ++it) {
        s.tape.clear();
        s.tape.bind_inputs(s.c_g.values, cv);
        const TapeFace face = render_face_tape(s.tape, *s.basis, cv, s.camera, &s.guiding);
        if (face.covered.empty())
            throw degenerate_render_error("guidance iteration " + std::to_string(it) +
                                          ": render covers no pixels");
        const ad::Var l_k = tapeops::landmark_loss(s.tape, face.landmark_xy, *s.target_landmarks);
        const ad::Var l_gp = tapeops::photometric_loss(s.tape, face, s.guiding);
        const ad::Var l_p = perceptual_tape(s.tape, *s.embedder, face, theta_target);
        const ad::Var l_r = tapeops::regularization_loss(s.tape, cv, w);
        const ad::Var total = w.alpha_k * l_k + w.alpha_gp * l_gp + w.alpha_p * l_p + w.alpha_r * l_r;

        s.tape.backward(total);
        std::array<double, coeff::kTotal> grads;
        for (int i = 0; i < coeff::kTotal; ++i) grads[i] = s.tape.adjoint(cv[i]);

        s.history.push_back({it, 'G', l_k.value(), l_gp.value(), l_p.value(), l_r.value(), 0.0,
                             0.0, 0.0, total.value()});
        adam.config.lr = cosine_lr(s.options, it);
        adam_step(adam, s.c_g.values, grads);
        check_finite(s.c_g, "guidance coefficients", it);
    }
    if (s.options.polish && s.options.iterations > 0) polish_guidance(s, theta_target);
    s.guidance_done = true;
    return s.c_g;
}

std::pair<CoeffVector, CoeffVector> fit_robust(FitSession& s) {
    if (!s.guidance_done)
        throw std::invalid_argument("fit_robust: run fit_guidance first (c_g must be frozen)");
    const LossWeights& w = s.options.weights;
    const bool adversarial = s.options.consistency == ConsistencyMode::kAdversarial;
    const bool disc_active = adversarial && s.options.use_discriminator;
    const bool record_consistency = w.beta_c != 0.0 && (disc_active || !adversarial);

    s.c_o = s.c_n = s.c_g;
    AdamState adam_o(coeff::kTotal, {.lr = s.options.robust_lr});
    AdamState adam_n(coeff::kTotal, {.lr = s.options.robust_lr});
    AdamState adam_d(s.disc.param_count(), {.lr = s.options.disc_lr});
    std::vector<double> disc_params(s.disc.param_count());
    std::vector<double> disc_grads(s.disc.param_count());

    std::vector<ad::Var> vo(coeff::kTotal), vn(coeff::kTotal);
    for (int it = 0; it < s.options.iterations; ++it) {
        // (a) coefficient step on c_o and c_n; c_g enters only as a constant.
        s.tape.clear();
        s.tape.bind_inputs(s.c_o.values, vo);
        s.tape.bind_inputs(s.c_n.values, vn);
        const TapeFace face_o = render_face_tape(s.tape, *s.basis, vo, s.camera, nullptr);
        const TapeFace face_n = render_face_tape(s.tape, *s.basis, vn, s.camera, nullptr);
        if (face_o.covered.empty() || face_n.covered.empty())
            throw degenerate_render_error("robustification iteration " + std::to_string(it) +
                                          ": render covers no pixels");
        const ad::Var l_o = tapeops::photometric_loss(s.tape, face_o, s.guiding);
        const ad::Var l_n = tapeops::photometric_loss(s.tape, face_n, s.guiding);

        double l_c_value = 0.0;
        ad::Var total;
        if (record_consistency && adversarial) {
            const auto logits_g = discriminator_forward(s.disc, s.c_g);
            double guiding_term = 0.0;
            for (int k = 0; k < 2; ++k)
                guiding_term += huber(logits_g[k] - kLabelGuiding[k], w.huber_delta);
            const auto logits_o = tapeops::discriminator_forward(s.tape, s.disc, vo);
            const auto logits_n = tapeops::discriminator_forward(s.tape, s.disc, vn);
            ad::Var l_co = tapeops::huber(logits_o[0] - kLabelRobust[0], w.huber_delta) +
                           tapeops::huber(logits_o[1] - kLabelRobust[1], w.huber_delta) +
                           guiding_term;
            ad::Var l_cn = tapeops::huber(logits_n[0] - kLabelRobust[0], w.huber_delta) +
                           tapeops::huber(logits_n[1] - kLabelRobust[1], w.huber_delta) +
                           guiding_term;
            const ad::Var l_c = l_co + l_cn;
            l_c_value = l_c.value();
            total = w.beta_o * l_o + w.beta_n * l_n - w.beta_c * l_c;
        } else if (record_consistency) { // L2 consistency ablation, added as a penalty
            std::vector<ad::Var> diffs;
            diffs.reserve(2 * coeff::kTotal);
            for (int i = 0; i < coeff::kTotal; ++i) diffs.push_back(vo[i] - s.c_g.values[i]);
            for (int i = 0; i < coeff::kTotal; ++i) diffs.push_back(vn[i] - s.c_g.values[i]);
            const ad::Var l_c = s.tape.dot_pairs(diffs, diffs);
            l_c_value = l_c.value();
            total = w.beta_o * l_o + w.beta_n * l_n + w.beta_c * l_c;
        } else {
            if (disc_active)
                l_c_value = consistency_loss(s.disc, s.c_g, s.c_o, s.c_n, kLabelGuiding,
                                             kLabelRobust, kLabelRobust, w.huber_delta);
            total = w.beta_o * l_o + w.beta_n * l_n;
        }

        s.tape.backward(total);
        std::array<double, coeff::kTotal> go, gn;
        for (int i = 0; i < coeff::kTotal; ++i) {
            go[i] = s.tape.adjoint(vo[i]);
            gn[i] = s.tape.adjoint(vn[i]);
        }
        s.history.push_back({it, 'R', 0.0, 0.0, 0.0, 0.0, l_o.value(), l_n.value(), l_c_value,
                             total.value()});
        FitOptions sched = s.options;
        sched.lr = s.options.robust_lr;
        const double lr = cosine_lr(sched, it);
        adam_o.config.lr = lr;
        adam_n.config.lr = lr;
        adam_step(adam_o, s.c_o.values, go);
        adam_step(adam_n, s.c_n.values, gn);
        check_finite(s.c_o, "occlusion coefficients", it);
        check_finite(s.c_n, "noise coefficients", it);

        // (b) discriminator step against L_C at the fresh coefficients.
        if (disc_active) {
            s.disc_tape.clear();
            const tapeops::DiscVars dv = tapeops::bind_discriminator(s.disc_tape, s.disc);
            const auto lg = tapeops::discriminator_forward_params(s.disc_tape, dv, s.disc, s.c_g);
            const auto lo = tapeops::discriminator_forward_params(s.disc_tape, dv, s.disc, s.c_o);
            const auto ln = tapeops::discriminator_forward_params(s.disc_tape, dv, s.disc, s.c_n);
            const ad::Var hg = tapeops::huber(lg[0] - kLabelGuiding[0], w.huber_delta) +
                               tapeops::huber(lg[1] - kLabelGuiding[1], w.huber_delta);
            const ad::Var ho = tapeops::huber(lo[0] - kLabelRobust[0], w.huber_delta) +
                               tapeops::huber(lo[1] - kLabelRobust[1], w.huber_delta);
            const ad::Var hn = tapeops::huber(ln[0] - kLabelRobust[0], w.huber_delta) +
                               tapeops::huber(ln[1] - kLabelRobust[1], w.huber_delta);
            const ad::Var l_c_d = 2.0 * hg + ho + hn;
            s.disc_tape.backward(l_c_d);
            for (std::size_t i = 0; i < dv.params.size(); ++i)
                disc_grads[i] = s.disc_tape.adjoint(dv.params[i]);
            s.disc.pack_params(disc_params);
            adam_step(adam_d, disc_params, disc_grads);
            s.disc.unpack_params(disc_params);
        }
    }
    return {s.c_o, s.c_n};
}

CoeffVector fit_photometric(const MorphableBasis& basis, const Camera& camera,
                            const Image& target, const FitOptions& options) {
    if (target.width != camera.width || target.height != camera.height)
        throw std::invalid_argument("fit_photometric: target image size mismatch");
    CoeffVector c = initial_coefficients();
    AdamState adam(coeff::kTotal, {.lr = options.lr});
    ad::Tape tape;
    std::vector<ad::Var> cv(coeff::kTotal);
    for (int it = 0; it < options.iterations; ++it) {
        tape.clear();
        tape.bind_inputs(c.values, cv);
        const TapeFace face = render_face_tape(tape, basis, cv, camera, nullptr);
        if (face.covered.empty())
            throw degenerate_render_error("photometric fit iteration " + std::to_string(it) +
                                          ": render covers no pixels");
        const ad::Var loss = tapeops::photometric_loss(tape, face, target);
        tape.backward(loss);
        std::array<double, coeff::kTotal> grads;
        for (int i = 0; i < coeff::kTotal; ++i) grads[i] = tape.adjoint(cv[i]);
        adam.config.lr = cosine_lr(options, it);
        adam_step(adam, c.values, grads);
        check_finite(c, "photometric fit coefficients", it);
    }
    return c;
}

double discriminator_accuracy(const Discriminator& disc, std::span<const CoeffVector> guiding,
                              std::span<const CoeffVector> robust) {
    if (guiding.empty() || robust.empty())
        throw std::invalid_argument("discriminator_accuracy: both sets must be nonempty");
    std::size_t correct = 0;
    for (const CoeffVector& c : guiding) {
        const auto logits = discriminator_forward(disc, c);
        if (!(logits[1] > logits[0])) ++correct; // tie goes to index 0
    }
    for (const CoeffVector& c : robust) {
        const auto logits = discriminator_forward(disc, c);
        if (logits[1] > logits[0]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(guiding.size() + robust.size());
}

void train_discriminator(Discriminator& disc, std::span<const CoeffVector> guiding,
                         std::span<const CoeffVector> robust, int steps, double lr, double delta) {
    if (guiding.empty() || robust.empty())
        throw std::invalid_argument("train_discriminator: both sets must be nonempty");
    AdamState adam(disc.param_count(), {.lr = lr});
    std::vector<double> params(disc.param_count());
    std::vector<double> grads(disc.param_count());
    ad::Tape tape;
    for (int step = 0; step < steps; ++step) {
        tape.clear();
        const tapeops::DiscVars dv = tapeops::bind_discriminator(tape, disc);
        ad::Var loss = tape.constant(0.0);
        for (const CoeffVector& c : guiding) {
            const auto logits = tapeops::discriminator_forward_params(tape, dv, disc, c);
            loss = loss + tapeops::huber(logits[0] - kLabelGuiding[0], delta) +
                   tapeops::huber(logits[1] - kLabelGuiding[1], delta);
        }
        for (const CoeffVector& c : robust) {
            const auto logits = tapeops::discriminator_forward_params(tape, dv, disc, c);
            loss = loss + tapeops::huber(logits[0] - kLabelRobust[0], delta) +
                   tapeops::huber(logits[1] - kLabelRobust[1], delta);
        }
        tape.backward(loss);
        for (std::size_t i = 0; i < dv.params.size(); ++i) grads[i] = tape.adjoint(dv.params[i]);
        disc.pack_params(params);
        adam_step(adam, params, grads);
        disc.unpack_params(params);
    }
}

// ---- Amortized regressor ----------------------------------------------------

AmortizedRegressor AmortizedRegressor::seeded(std::uint64_t seed) {
    AmortizedRegressor r;
    r.w1.assign(static_cast<std::size_t>(kHidden) * kIn, 0.0);
    r.b1.assign(kHidden, 0.0);
    r.w2.assign(static_cast<std::size_t>(kOut) * kHidden, 0.0);
    r.b2.assign(kOut, 0.0);
    Rng rng(substream(seed, 0x4E7ull));
    const double s1 = 0.5 / std::sqrt(static_cast<double>(kIn));
    const double s2 = 0.5 / std::sqrt(static_cast<double>(kHidden));
    for (double& w : r.w1) w = s1 * rng.normal();
    for (double& w : r.w2) w = s2 * rng.normal();
    return r;
}

std::size_t AmortizedRegressor::param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
}

void AmortizedRegressor::pack_params(std::span<double> out) const {
    std::size_t k = 0;
    for (double v : w1) out[k++] = v;
    for (double v : b1) out[k++] = v;
    for (double v : w2) out[k++] = v;
    for (double v : b2) out[k++] = v;
}

void AmortizedRegressor::unpack_params(std::span<const double> in) {
    std::size_t k = 0;
    for (double& v : w1) v = in[k++];
    for (double& v : b1) v = in[k++];
    for (double& v : w2) v = in[k++];
    for (double& v : b2) v = in[k++];
}

CoeffVector AmortizedRegressor::predict(const Image& image) const {
    const std::vector<double> cells = gray_cells_32(image);
    std::vector<double> hidden(kHidden);
    for (int j = 0; j < kHidden; ++j) {
        double acc = 0.0;
        const double* w = w1.data() + static_cast<std::size_t>(j) * kIn;
        for (int i = 0; i < kIn; ++i) acc += w[i] * cells[i];
        acc = acc + b1[j];
        hidden[j] = acc > 0.0 ? acc : leaky_slope * acc;
    }
    CoeffVector out = initial_coefficients();
    for (int k = 0; k < kOut; ++k) {
        double acc = 0.0;
        const double* w = w2.data() + static_cast<std::size_t>(k) * kHidden;
        for (int j = 0; j < kHidden; ++j) acc += w[j] * hidden[j];
        out.values[k] += acc + b2[k];
    }
    return out;
}

namespace {

struct RegVars {
    std::vector<ad::Var> params;
    std::span<const ad::Var> w1() const {
        return {params.data(), AmortizedRegressor::kHidden * AmortizedRegressor::kIn};
    }
    std::span<const ad::Var> b1() const {
        return {params.data() + AmortizedRegressor::kHidden * AmortizedRegressor::kIn,
                AmortizedRegressor::kHidden};
    }
    std::span<const ad::Var> w2() const {
        return {params.data() + AmortizedRegressor::kHidden * AmortizedRegressor::kIn +
                    AmortizedRegressor::kHidden,
                static_cast<std::size_t>(AmortizedRegressor::kOut) * AmortizedRegressor::kHidden};
    }
    std::span<const ad::Var> b2() const {
        return {params.data() + AmortizedRegressor::kHidden * AmortizedRegressor::kIn +
                    AmortizedRegressor::kHidden +
                    static_cast<std::size_t>(AmortizedRegressor::kOut) *
                        AmortizedRegressor::kHidden,
                AmortizedRegressor::kOut};
    }
};

RegVars bind_regressor(ad::Tape& tape, const AmortizedRegressor& reg) {
    RegVars rv;
    std::vector<double> packed(reg.param_count());
    reg.pack_params(packed);
    rv.params.resize(packed.size());
    tape.bind_inputs(packed, rv.params);
    return rv;
}

std::vector<ad::Var> regressor_forward_tape(ad::Tape& tape, const RegVars& rv,
                                            const AmortizedRegressor& reg, const double* cells) {
    using ad::Var;
    std::vector<Var> pre(AmortizedRegressor::kHidden);
    const auto w1 = rv.w1();
    const auto b1 = rv.b1();
    for (int j = 0; j < AmortizedRegressor::kHidden; ++j) {
        const Var lin = tape.affine(
            w1.subspan(static_cast<std::size_t>(j) * AmortizedRegressor::kIn,
                       AmortizedRegressor::kIn),
            cells, 0.0);
        pre[j] = lin + b1[j];
    }
    std::vector<Var> act(AmortizedRegressor::kHidden);
    for (int j = 0; j < AmortizedRegressor::kHidden; ++j)
        act[j] = ad::leaky_relu(pre[j], reg.leaky_slope);
    const CoeffVector canonical = initial_coefficients();
    std::vector<Var> out(AmortizedRegressor::kOut);
    const auto w2 = rv.w2();
    const auto b2 = rv.b2();
    for (int k = 0; k < AmortizedRegressor::kOut; ++k) {
        const Var dot = tape.dot_pairs(
            w2.subspan(static_cast<std::size_t>(k) * AmortizedRegressor::kHidden,
                       AmortizedRegressor::kHidden),
            act);
        out[k] = dot + b2[k] + canonical.values[k];
    }
    return out;
}

double mean_guidance_loss(const AmortizedRegressor& reg, std::span<const TripletSample> dataset,
                          const MorphableBasis& basis, const Camera& camera,
                          const LossWeights& w) {
    const ReferenceEmbedder& embedder = default_embedder();
    double acc = 0.0;
    for (const TripletSample& t : dataset) {
        const CoeffVector c = reg.predict(t.guiding);
        const RenderedFrame frame = render_face(basis, c, camera, &t.guiding);
        double l_k = 0.0;
        if (t.gt_landmarks)
            l_k = landmark_loss(project_landmarks(basis, c, camera), *t.gt_landmarks);
        const double l_gp = photometric_loss(frame, t.guiding);
        const double l_p = perceptual_loss(embedder.embed(t.guiding), embedder.embed(frame.rgb));
        const double l_r = regularization_loss(c, w);
        acc += guide_total(l_k, l_gp, l_p, l_r, w);
    }
    return acc / static_cast<double>(dataset.size());
}

} // namespace

AmortizedTrainStats train_amortized(AmortizedRegressor& regressor,
                                    std::span<const TripletSample> dataset,
                                    const MorphableBasis& basis, const Camera& camera,
                                    const AmortizedTrainOptions& options) {
    if (dataset.empty()) throw std::invalid_argument("train_amortized: dataset is empty");
    options.weights.validate();
    const LossWeights& w = options.weights;
    const ReferenceEmbedder& embedder = default_embedder();

    AmortizedTrainStats stats;
    stats.initial_guidance_loss = mean_guidance_loss(regressor, dataset, basis, camera, w);

    Discriminator disc = Discriminator::seeded(substream(options.seed, 0xD15Cull), 0.05);
    AdamState adam_r(regressor.param_count(), {.lr = options.lr});
    AdamState adam_d(disc.param_count(), {.lr = options.disc_lr});

    std::vector<Embedding> targets;
    targets.reserve(dataset.size());
    for (const TripletSample& t : dataset) targets.push_back(embedder.embed(t.guiding));

    ad::Tape reg_tape, render_tape, dtape;
    std::vector<double> params(regressor.param_count());
    std::vector<double> param_grads(regressor.param_count());
    std::vector<double> disc_params(disc.param_count());
    std::vector<double> disc_grads(disc.param_count());

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t start = 0; start < dataset.size();
             start += static_cast<std::size_t>(options.batch_triplets)) {
            const std::size_t stop =
                std::min(dataset.size(), start + static_cast<std::size_t>(options.batch_triplets));
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            std::fill(param_grads.begin(), param_grads.end(), 0.0);
            std::vector<CoeffVector> batch_cg, batch_co, batch_cn;

            for (std::size_t si = start; si < stop; ++si) {
                const TripletSample& t = dataset[si];
                reg_tape.clear();
                const RegVars rv = bind_regressor(reg_tape, regressor);
                const std::vector<double> cells_g = gray_cells_32(t.guiding);
                const std::vector<double> cells_o = gray_cells_32(t.occluded);
                const std::vector<double> cells_n = gray_cells_32(t.noisy);
                const std::vector<ad::Var> pg = regressor_forward_tape(reg_tape, rv, regressor,
                                                                       cells_g.data());
                const std::vector<ad::Var> po = regressor_forward_tape(reg_tape, rv, regressor,
                                                                       cells_o.data());
                const std::vector<ad::Var> pn = regressor_forward_tape(reg_tape, rv, regressor,
                                                                       cells_n.data());
                CoeffVector cg, co, cn;
                for (int i = 0; i < coeff::kTotal; ++i) {
                    cg.values[i] = pg[i].value();
                    co.values[i] = po[i].value();
                    cn.values[i] = pn[i].value();
                }
                batch_cg.push_back(cg);
                batch_co.push_back(co);
                batch_cn.push_back(cn);

                // dL/dC per branch on the render tape, then chained through
                // the regressor tape.
                std::vector<ad::Var> cv(coeff::kTotal);
                std::vector<double> grad_c(3 * coeff::kTotal);

                render_tape.clear();
                render_tape.bind_inputs(cg.values, cv);
                TapeFace face = render_face_tape(render_tape, basis, cv, camera, &t.guiding);
                if (face.covered.empty())
                    throw degenerate_render_error("amortized training: clean render covers no pixels");
                ad::Var l_gp = tapeops::photometric_loss(render_tape, face, t.guiding);
                ad::Var l_p = perceptual_tape(render_tape, embedder, face, targets[si]);
                ad::Var l_r = tapeops::regularization_loss(render_tape, cv, w);
                ad::Var total_g = w.alpha_gp * l_gp + w.alpha_p * l_p + w.alpha_r * l_r;
                if (t.gt_landmarks) {
                    const ad::Var l_k =
                        tapeops::landmark_loss(render_tape, face.landmark_xy, *t.gt_landmarks);
                    total_g = total_g + w.alpha_k * l_k;
                }
                render_tape.backward(total_g);
                for (int i = 0; i < coeff::kTotal; ++i)
                    grad_c[i] = render_tape.adjoint(cv[i]) * inv_batch;

                const auto robust_branch = [&](const CoeffVector& c, std::size_t offset) {
                    render_tape.clear();
                    render_tape.bind_inputs(c.values, cv);
                    TapeFace f = render_face_tape(render_tape, basis, cv, camera, nullptr);
                    if (f.covered.empty())
                        throw degenerate_render_error(
                            "amortized training: degraded render covers no pixels");
                    const ad::Var l_img = tapeops::photometric_loss(render_tape, f, t.guiding);
                    ad::Var total = (offset == coeff::kTotal ? w.beta_o : w.beta_n) * l_img;
                    if (w.beta_c != 0.0) {
                        const auto logits =
                            tapeops::discriminator_forward(render_tape, disc, cv);
                        const ad::Var branch =
                            tapeops::huber(logits[0] - kLabelRobust[0], w.huber_delta) +
                            tapeops::huber(logits[1] - kLabelRobust[1], w.huber_delta);
                        total = total - w.beta_c * branch;
                    }
                    render_tape.backward(total);
                    for (int i = 0; i < coeff::kTotal; ++i)
                        grad_c[offset + i] = render_tape.adjoint(cv[i]) * inv_batch;
                };
                robust_branch(co, coeff::kTotal);
                robust_branch(cn, 2 * coeff::kTotal);

                std::vector<ad::Var> outputs;
                outputs.reserve(3 * coeff::kTotal);
                outputs.insert(outputs.end(), pg.begin(), pg.end());
                outputs.insert(outputs.end(), po.begin(), po.end());
                outputs.insert(outputs.end(), pn.begin(), pn.end());
                reg_tape.backward_weighted(outputs, grad_c);
                for (std::size_t i = 0; i < rv.params.size(); ++i)
                    param_grads[i] += reg_tape.adjoint(rv.params[i]);
            }

            regressor.pack_params(params);
            adam_step(adam_r, params, param_grads);
            regressor.unpack_params(params);
            ++stats.optimizer_steps;

            // One discriminator step per sub-batch on the frozen predictions.
            dtape.clear();
            const tapeops::DiscVars dv = tapeops::bind_discriminator(dtape, disc);
            ad::Var dloss = dtape.constant(0.0);
            for (std::size_t bi = 0; bi < batch_cg.size(); ++bi) {
                const auto lg = tapeops::discriminator_forward_params(dtape, dv, disc, batch_cg[bi]);
                const auto lo = tapeops::discriminator_forward_params(dtape, dv, disc, batch_co[bi]);
                const auto ln = tapeops::discriminator_forward_params(dtape, dv, disc, batch_cn[bi]);
                const ad::Var hg = tapeops::huber(lg[0] - kLabelGuiding[0], w.huber_delta) +
                                   tapeops::huber(lg[1] - kLabelGuiding[1], w.huber_delta);
                const ad::Var ho = tapeops::huber(lo[0] - kLabelRobust[0], w.huber_delta) +
                                   tapeops::huber(lo[1] - kLabelRobust[1], w.huber_delta);
                const ad::Var hn = tapeops::huber(ln[0] - kLabelRobust[0], w.huber_delta) +
                                   tapeops::huber(ln[1] - kLabelRobust[1], w.huber_delta);
                dloss = dloss + 2.0 * hg + ho + hn;
            }
            dtape.backward(dloss);
            for (std::size_t i = 0; i < dv.params.size(); ++i)
                disc_grads[i] = dtape.adjoint(dv.params[i]);
            disc.pack_params(disc_params);
            adam_step(adam_d, disc_params, disc_grads);
            disc.unpack_params(disc_params);
        }
    }

    stats.final_guidance_loss = mean_guidance_loss(regressor, dataset, basis, camera, w);
    return stats;
}

} // namespace facefit
