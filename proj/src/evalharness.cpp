#include "facefit/evalharness.hpp"

#include "facefit/errors.hpp"
#include "facefit/io.hpp"
#include "facefit/parallel.hpp"
#include "facefit/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>

namespace facefit {

using nlohmann::json;

ExternalEmbedder ExternalEmbedder::load(const std::string& path) {
    const std::vector<unsigned char> bytes = io::read_file(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const std::exception& e) {
        throw io_error(path + ": " + e.what());
    }
    ExternalEmbedder out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        Embedding emb;
        for (const json& v : it.value()) emb.values.push_back(v.get<double>());
        double nrm2 = 0.0;
        for (double v : emb.values) nrm2 += v * v;
        if (std::fabs(std::sqrt(nrm2) - 1.0) > 1e-6)
            throw io_error(path + ": embedding for '" + it.key() + "' is not unit norm");
        out.table_.emplace(it.key(), std::move(emb));
    }
    return out;
}

Embedding ExternalEmbedder::embed(const Image&, const std::string& key) const {
    const auto it = table_.find(key);
    if (it == table_.end()) throw io_error("external embedder: no embedding for key '" + key + "'");
    return it->second;
}

double perceptual_distance(const Embedder& embedder, const Image& a, const Image& b,
                           const std::string& key_a, const std::string& key_b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("perceptual_distance: image size mismatch");
    const Embedding ea = embedder.embed(a, key_a);
    const Embedding eb = embedder.embed(b, key_b);
    if (ea.values.size() != eb.values.size())
        throw std::invalid_argument("perceptual_distance: embedding size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < ea.values.size(); ++i) {
        const double d = ea.values[i] - eb.values[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

CoeffVector swap_coefficients(const CoeffVector& c_degraded, const CoeffVector& c_guiding) {
    CoeffVector out = c_degraded;
    for (int i = 0; i < coeff::kExprSize; ++i)
        out.values[coeff::kExprOffset + i] = c_guiding.values[coeff::kExprOffset + i];
    for (int i = 0; i < coeff::kIllumSize; ++i)
        out.values[coeff::kIllumOffset + i] = c_guiding.values[coeff::kIllumOffset + i];
    for (int i = 0; i < coeff::kPoseSize; ++i)
        out.values[coeff::kPoseOffset + i] = c_guiding.values[coeff::kPoseOffset + i];
    return out;
}

const char* to_string(EvalProtocol protocol) {
    switch (protocol) {
    case EvalProtocol::kRealUnpaired: return "real_unpaired";
    case EvalProtocol::kSyntheticPaired: return "synthetic_paired";
    case EvalProtocol::kNoise: return "noise";
    }
    return "?";
}

CoeffVector fit_robust_one(FitSession& s, int iterations, RobustWarmStart warm) {
    if (!s.guidance_done)
        throw std::invalid_argument("fit_robust_one: run fit_guidance first");
    const LossWeights& w = s.options.weights;
    const bool adversarial = s.options.consistency == ConsistencyMode::kAdversarial;
    const bool disc_active = adversarial && s.options.use_discriminator && w.beta_c != 0.0;

    s.c_o = warm == RobustWarmStart::kGuidance ? s.c_g : initial_coefficients();
    FitOptions sched = s.options;
    sched.iterations = iterations;
    sched.lr = s.options.robust_lr;
    AdamState adam_o(coeff::kTotal, {.lr = sched.lr});
    AdamState adam_d(s.disc.param_count(), {.lr = s.options.disc_lr});
    std::vector<double> disc_params(s.disc.param_count());
    std::vector<double> disc_grads(s.disc.param_count());

    std::vector<ad::Var> vo(coeff::kTotal);
    for (int it = 0; it < iterations; ++it) {
        s.tape.clear();
        s.tape.bind_inputs(s.c_o.values, vo);
        const TapeFace face = render_face_tape(s.tape, *s.basis, vo, s.camera, nullptr);
        if (face.covered.empty())
            throw degenerate_render_error("robust fit iteration " + std::to_string(it) +
                                          ": render covers no pixels");
        const ad::Var l_o = tapeops::photometric_loss(s.tape, face, s.guiding);
        ad::Var total;
        if (disc_active) {
            const auto logits_g = discriminator_forward(s.disc, s.c_g);
            double guiding_term = 0.0;
            for (int k = 0; k < 2; ++k)
                guiding_term += huber(logits_g[k] - kLabelGuiding[k], w.huber_delta);
            const auto logits_o = tapeops::discriminator_forward(s.tape, s.disc, vo);
            const ad::Var l_co = tapeops::huber(logits_o[0] - kLabelRobust[0], w.huber_delta) +
                                 tapeops::huber(logits_o[1] - kLabelRobust[1], w.huber_delta) +
                                 guiding_term;
            total = w.beta_o * l_o - w.beta_c * l_co;
        } else if (!adversarial && w.beta_c != 0.0) {
            std::vector<ad::Var> diffs;
            diffs.reserve(coeff::kTotal);
            for (int i = 0; i < coeff::kTotal; ++i) diffs.push_back(vo[i] - s.c_g.values[i]);
            const ad::Var l2 = s.tape.dot_pairs(diffs, diffs);
            total = w.beta_o * l_o + w.beta_c * l2;
        } else {
            total = w.beta_o * l_o;
        }
        s.tape.backward(total);
        std::array<double, coeff::kTotal> go;
        for (int i = 0; i < coeff::kTotal; ++i) go[i] = s.tape.adjoint(vo[i]);
        // Same cosine schedule as the batch fits.
        const double lo_lr = sched.lr * sched.lr_final_frac;
        const double t = iterations <= 1
                             ? 0.0
                             : static_cast<double>(it) / static_cast<double>(iterations - 1);
        adam_o.config.lr = lo_lr + (sched.lr - lo_lr) * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
        adam_step(adam_o, s.c_o.values, go);
        if (!s.c_o.finite())
            throw degenerate_render_error("robust fit diverged at iteration " + std::to_string(it));

        if (disc_active) {
            s.disc_tape.clear();
            const tapeops::DiscVars dv = tapeops::bind_discriminator(s.disc_tape, s.disc);
            const auto lg = tapeops::discriminator_forward_params(s.disc_tape, dv, s.disc, s.c_g);
            const auto lo2 = tapeops::discriminator_forward_params(s.disc_tape, dv, s.disc, s.c_o);
            const ad::Var hg = tapeops::huber(lg[0] - kLabelGuiding[0], w.huber_delta) +
                               tapeops::huber(lg[1] - kLabelGuiding[1], w.huber_delta);
            const ad::Var ho = tapeops::huber(lo2[0] - kLabelRobust[0], w.huber_delta) +
                               tapeops::huber(lo2[1] - kLabelRobust[1], w.huber_delta);
            const ad::Var l_c_d = hg + ho;
            s.disc_tape.backward(l_c_d);
            for (std::size_t i = 0; i < dv.params.size(); ++i)
                disc_grads[i] = s.disc_tape.adjoint(dv.params[i]);
            s.disc.pack_params(disc_params);
            adam_step(adam_d, disc_params, disc_grads);
            s.disc.unpack_params(disc_params);
        }
    }
    return s.c_o;
}

EvalReport evaluate_dataset(const Manifest& manifest, const std::string& manifest_dir,
                            const MorphableBasis& basis, EvalProtocol protocol,
                            const EvalFitterConfig& fitter, const Embedder& embedder,
                            const std::string& config_hash) {
    EvalReport report;
    report.protocol = to_string(protocol);
    report.swap_applied = protocol == EvalProtocol::kRealUnpaired;
    report.fitter = fitter.kind == FitterKind::kRogue ? "rogue" : "naive";
    report.config_hash = config_hash;
    report.samples.resize(manifest.entries.size());

    const int identities = manifest.params.identities;
    const int per_identity = manifest.params.per_identity;
    const int robust_iters =
        fitter.robust_iterations >= 0 ? fitter.robust_iterations : fitter.fit.iterations;

    parallel::for_each_index(identities, [&](std::int64_t identity) {
        // One guidance fit per identity; its samples share the clean image.
        const std::size_t base_index = static_cast<std::size_t>(identity) * per_identity;
        CoeffVector c_g;
        FitSession session;
        bool guidance_ok = false;
        std::string guidance_error;
        try {
            const CleanReference ref =
                load_clean_reference(manifest, manifest_dir, static_cast<int>(identity));
            FitOptions opt = fitter.fit;
            opt.seed = substream(fitter.fit.seed, static_cast<std::uint64_t>(identity));
            session = make_session(basis, manifest.camera, ref.guiding, opt);
            session.target_landmarks = ref.landmarks;
            if (fitter.guidance_warm == GuidanceWarmStart::kGroundTruth)
                session.c_g = ref.gt_clean;
            c_g = fit_guidance(session);
            guidance_ok = true;
        } catch (const std::exception& e) {
            guidance_error = e.what();
        }

        for (int j = 0; j < per_identity; ++j) {
            const std::size_t index = base_index + static_cast<std::size_t>(j);
            EvalSampleResult& r = report.samples[index];
            r.identity = static_cast<int>(identity);
            r.sample = j;
            if (!guidance_ok) {
                r.failed = true;
                r.error = "guidance fit failed: " + guidance_error;
                continue;
            }
            try {
                const TripletSample t = load_triplet(manifest, manifest_dir, index);
                const Image& degraded =
                    protocol == EvalProtocol::kNoise ? t.noisy : t.occluded;
                CoeffVector c_fit;
                if (fitter.kind == FitterKind::kNaive) {
                    FitOptions opt = fitter.fit;
                    opt.iterations = robust_iters;
                    opt.seed = substream(fitter.fit.seed,
                                         0x7000ull + static_cast<std::uint64_t>(index));
                    c_fit = fit_photometric(basis, manifest.camera, degraded, opt);
                } else {
                    session.occluded = degraded;
                    c_fit = fit_robust_one(session, robust_iters, fitter.robust_warm);
                }
                const CoeffVector c_render =
                    report.swap_applied ? swap_coefficients(c_fit, c_g) : c_fit;
                const RenderedFrame frame =
                    render_face(basis, c_render, manifest.camera, &t.guiding);
                const Image composite = io::quantize_image(frame.rgb);
                const ManifestEntry& e = manifest.entries[index];
                r.distance = perceptual_distance(embedder, t.guiding, composite, e.clean_path,
                                                 e.occluded_path + ".render");
            } catch (const std::exception& e) {
                r.failed = true;
                r.error = e.what();
            }
        }
    });

    // Aggregate. Per-identity means first, then overall mean/std over all
    // successful samples.
    report.per_identity_mean.assign(identities, 0.0);
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (int i = 0; i < identities; ++i) {
        double id_sum = 0.0;
        std::size_t id_count = 0;
        for (int j = 0; j < per_identity; ++j) {
            const EvalSampleResult& r = report.samples[static_cast<std::size_t>(i) * per_identity + j];
            if (r.failed) {
                ++report.failures;
                continue;
            }
            id_sum += r.distance;
            sum += r.distance;
            sum_sq += r.distance * r.distance;
            ++id_count;
            ++count;
        }
        report.per_identity_mean[i] = id_count ? id_sum / static_cast<double>(id_count) : 0.0;
    }
    if (count > 0) {
        report.overall_mean = sum / static_cast<double>(count);
        const double var = sum_sq / static_cast<double>(count) - report.overall_mean * report.overall_mean;
        report.overall_std = std::sqrt(std::max(0.0, var));
    }
    return report;
}

std::string report_csv(const EvalReport& report) {
    std::string out = "identity,sample,distance,failed,error\n";
    for (const EvalSampleResult& r : report.samples) {
        out += std::to_string(r.identity) + "," + std::to_string(r.sample) + ",";
        out += r.failed ? "" : io::format_double(r.distance);
        out += ",";
        out += r.failed ? "1" : "0";
        out += ",";
        std::string err = r.error;
        for (char& c : err)
            if (c == ',' || c == '\n') c = ';';
        out += err + "\n";
    }
    return out;
}

std::string report_summary_json(const EvalReport& report) {
    json j;
    j["protocol"] = report.protocol;
    j["swap"] = report.swap_applied;
    j["fitter"] = report.fitter;
    j["overall_mean"] = report.overall_mean;
    j["overall_std"] = report.overall_std;
    j["samples"] = report.samples.size();
    j["failures"] = report.failures;
    j["per_identity_mean"] = report.per_identity_mean;
    j["config_hash"] = report.config_hash;
    return j.dump(2) + "\n";
}

} // namespace facefit
