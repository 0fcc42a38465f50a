#include "facefit/config.hpp"
#include "facefit/dataset.hpp"
#include "facefit/errors.hpp"
#include "facefit/evalharness.hpp"
#include "facefit/io.hpp"
#include "facefit/mm.hpp"
#include "facefit/parallel.hpp"
#include "facefit/pipeline.hpp"
#include "facefit/render.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

namespace fs = std::filesystem;
using namespace facefit;

namespace {

FitOptions fit_options_from(const RunConfig& cfg) {
    FitOptions o;
    o.iterations = cfg.iterations;
    o.lr = cfg.lr;
    o.lr_final_frac = cfg.lr_final_frac;
    o.robust_lr = cfg.robust_lr;
    o.disc_lr = cfg.disc_lr;
    o.seed = cfg.seed;
    o.weights = cfg.weights;
    o.consistency =
        cfg.consistency == "l2" ? ConsistencyMode::kL2 : ConsistencyMode::kAdversarial;
    o.use_discriminator = cfg.use_discriminator;
    o.polish = cfg.polish;
    return o;
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
    std::string out = "iteration,phase,L_K,L_GP,L_P,L_R,L_O,L_N,L_C,total\n";
    for (const HistoryRow& r : rows) {
        out += std::to_string(r.iteration);
        out += ",";
        out += r.phase;
        out += ",";
        out += io::format_double(r.l_k) + "," + io::format_double(r.l_gp) + "," +
               io::format_double(r.l_p) + "," + io::format_double(r.l_r) + "," +
               io::format_double(r.l_o) + "," + io::format_double(r.l_n) + "," +
               io::format_double(r.l_c) + "," + io::format_double(r.total) + "\n";
    }
    return out;
}

MorphableBasis load_basis_for(const std::string& path, const std::string& relative_to) {
    fs::path p(path);
    if (p.is_relative() && !relative_to.empty() && !fs::exists(p))
        p = fs::path(relative_to) / p;
    return io::read_basis(p.string());
}

int run_synth_basis(const RunConfig& cfg, const std::string& out_path) {
    const MorphableBasis basis = generate_synthetic_basis(cfg.basis_vertices, cfg.basis_seed);
    io::write_basis(basis, out_path);
    std::printf("wrote %s (%u vertices, %zu triangles)\n", out_path.c_str(), basis.vertex_count,
                basis.triangles.size());
    return 0;
}

int run_make_dataset(const RunConfig& cfg) {
    const MorphableBasis basis = io::read_basis(cfg.basis_path);
    const std::string abs_basis = fs::absolute(cfg.basis_path).string();
    const Manifest m =
        build_triplet_dataset(basis, cfg.camera, cfg.dataset, cfg.out_dir, abs_basis);
    std::printf("wrote %zu triplets under %s\n", m.entries.size(), cfg.out_dir.c_str());
    return 0;
}

int run_fit(const RunConfig& cfg, const std::string& triplet_path, const std::string& mode) {
    const TripletSample triplet = load_triplet_file(triplet_path);
    // Camera and basis live in the dataset manifest two directories up.
    const fs::path manifest_path =
        fs::path(triplet_path).parent_path().parent_path().parent_path() / "manifest.json";
    const Manifest manifest = read_manifest(manifest_path.string());
    const MorphableBasis basis =
        load_basis_for(manifest.basis_path, manifest_path.parent_path().string());

    fs::create_directories(cfg.out_dir);
    FitSession session = make_session(basis, manifest.camera, triplet.guiding,
                                      fit_options_from(cfg));
    session.target_landmarks = triplet.gt_landmarks;
    session.occluded = triplet.occluded;
    session.noisy = triplet.noisy;

    const CoeffVector c_g = fit_guidance(session);
    io::write_coeffs(c_g, (fs::path(cfg.out_dir) / "c_g.rgcv").string());
    const RenderedFrame frame_g = render_face(basis, c_g, manifest.camera, &triplet.guiding);
    io::write_ppm(io::quantize_image(frame_g.rgb), (fs::path(cfg.out_dir) / "render_g.ppm").string());

    if (mode == "rogue") {
        const auto [c_o, c_n] = fit_robust(session);
        io::write_coeffs(c_o, (fs::path(cfg.out_dir) / "c_o.rgcv").string());
        io::write_coeffs(c_n, (fs::path(cfg.out_dir) / "c_n.rgcv").string());
        const RenderedFrame fo = render_face(basis, c_o, manifest.camera, &triplet.guiding);
        const RenderedFrame fn = render_face(basis, c_n, manifest.camera, &triplet.guiding);
        io::write_ppm(io::quantize_image(fo.rgb), (fs::path(cfg.out_dir) / "render_o.ppm").string());
        io::write_ppm(io::quantize_image(fn.rgb), (fs::path(cfg.out_dir) / "render_n.ppm").string());
    }
    io::write_text((fs::path(cfg.out_dir) / "history.csv").string(), history_csv(session.history));
    std::printf("fit complete: %s\n", cfg.out_dir.c_str());
    return 0;
}

int run_eval(const RunConfig& cfg, const std::string& manifest_path) {
    const Manifest manifest = read_manifest(manifest_path);
    const std::string manifest_dir = fs::path(manifest_path).parent_path().string();
    const MorphableBasis basis = load_basis_for(manifest.basis_path, manifest_dir);

    EvalProtocol protocol = EvalProtocol::kSyntheticPaired;
    if (cfg.protocol == "real_unpaired") protocol = EvalProtocol::kRealUnpaired;
    if (cfg.protocol == "noise") protocol = EvalProtocol::kNoise;

    EvalFitterConfig fitter;
    fitter.kind = cfg.eval_fitter == "naive" ? FitterKind::kNaive : FitterKind::kRogue;
    fitter.fit = fit_options_from(cfg);
    fitter.robust_iterations = cfg.robust_iterations;
    fitter.guidance_warm = cfg.guidance_warm == "ground_truth" ? GuidanceWarmStart::kGroundTruth
                                                               : GuidanceWarmStart::kZero;
    fitter.robust_warm =
        cfg.robust_warm == "guidance" ? RobustWarmStart::kGuidance : RobustWarmStart::kZero;

    std::unique_ptr<Embedder> embedder;
    if (cfg.embedder == "external")
        embedder = std::make_unique<ExternalEmbedder>(ExternalEmbedder::load(cfg.embeddings_path));
    else
        embedder = std::make_unique<ReferenceImageEmbedder>(cfg.embedder_seed);

    const EvalReport report = evaluate_dataset(manifest, manifest_dir, basis, protocol, fitter,
                                               *embedder, config_hash(cfg));
    fs::create_directories(cfg.out_dir);
    io::write_text((fs::path(cfg.out_dir) / "report.csv").string(), report_csv(report));
    io::write_text((fs::path(cfg.out_dir) / "summary.json").string(),
                   report_summary_json(report));
    std::printf("eval %s: mean %.6f std %.6f over %zu samples (%zu failures)\n",
                report.protocol.c_str(), report.overall_mean, report.overall_std,
                report.samples.size(), report.failures);
    if (report.failures == report.samples.size())
        throw degenerate_render_error("eval: every sample failed");
    return 0;
}

int run_render(const RunConfig& cfg, const std::string& coeffs_path,
               const std::string& background_path, const std::string& out_path) {
    const MorphableBasis basis = io::read_basis(cfg.basis_path);
    const CoeffVector coeffs = io::read_coeffs(coeffs_path);
    Image background;
    const Image* bg = nullptr;
    if (!background_path.empty()) {
        background = io::read_ppm(background_path);
        bg = &background;
    }
    const RenderedFrame frame = render_face(basis, coeffs, cfg.camera, bg);
    io::write_ppm(io::quantize_image(frame.rgb), out_path);
    std::printf("wrote %s (%zu covered pixels)\n", out_path.c_str(), frame.covered_count());
    return 0;
}

int run_export_obj(const RunConfig& cfg, const std::string& coeffs_path,
                   const std::string& out_path) {
    const MorphableBasis basis = io::read_basis(cfg.basis_path);
    CoeffVector coeffs; // zero coefficients = mean face
    if (!coeffs_path.empty()) coeffs = io::read_coeffs(coeffs_path);
    const std::vector<double> geometry = morph_geometry(basis, coeffs);
    std::vector<double> colors = morph_texture(basis, coeffs);
    for (double& c : colors) c = std::clamp(c, 0.0, 1.0);
    io::write_obj(geometry, colors, basis.triangles, out_path);
    std::printf("wrote %s (%u vertices)\n", out_path.c_str(), basis.vertex_count);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust 3D morphable-model face fitting toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    RunConfig cfg;
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file");
    auto* seed_opt = app.add_option("--seed", cfg.seed, "Run seed");
    auto* out_opt = app.add_option("--out", cfg.out_dir, "Output directory or file");
    auto* threads_opt = app.add_option("--threads", cfg.threads, "Worker threads (0 = auto)");

    auto* synth = app.add_subcommand("synth-basis", "Generate a synthetic basis file");
    std::uint32_t vertices = 0;
    auto* vertices_opt = synth->add_option("--vertices", vertices, "Vertex count (>= 68)");
    std::string synth_out;
    synth->add_option("-o,--output", synth_out, "Basis file path")->required();

    auto* mkds = app.add_subcommand("make-dataset", "Render a triplet dataset + manifest");
    std::string ds_basis;
    mkds->add_option("--basis", ds_basis, "Basis file")->required();
    int identities = 0, per_identity = 0;
    auto* ident_opt = mkds->add_option("--identities", identities);
    auto* per_opt = mkds->add_option("--per-identity", per_identity);
    bool unpaired = false;
    auto* unpaired_opt = mkds->add_flag("--unpaired", unpaired,
                                        "Redraw the clean reference pose/illumination");

    auto* fitc = app.add_subcommand("fit", "Fit one triplet");
    std::string triplet_path, fit_mode = "guidance";
    fitc->add_option("--triplet", triplet_path, "triplet.json path")->required();
    fitc->add_option("--mode", fit_mode, "guidance | rogue")
        ->check(CLI::IsMember({"guidance", "rogue"}));
    int fit_iters = 0;
    auto* fit_iters_opt = fitc->add_option("--iterations", fit_iters);
    double beta_c = 0.0;
    auto* beta_c_opt = fitc->add_option("--beta-c", beta_c, "Consistency weight override");
    bool no_disc = false;
    auto* no_disc_opt = fitc->add_flag("--no-discriminator", no_disc);
    std::string consistency;
    auto* consistency_opt = fitc->add_option("--consistency", consistency)
                                ->check(CLI::IsMember({"adversarial", "l2"}));

    auto* evalc = app.add_subcommand("eval", "Run the evaluation protocol over a manifest");
    std::string manifest_path;
    evalc->add_option("--manifest", manifest_path, "manifest.json path")->required();
    std::string protocol;
    auto* protocol_opt = evalc->add_option("--protocol", protocol)
                             ->check(CLI::IsMember({"real_unpaired", "synthetic_paired", "noise"}));
    std::string eval_fitter;
    auto* eval_fitter_opt =
        evalc->add_option("--fitter", eval_fitter)->check(CLI::IsMember({"rogue", "naive"}));
    int eval_iters = 0, eval_robust_iters = -2;
    auto* eval_iters_opt = evalc->add_option("--iterations", eval_iters);
    auto* eval_robust_opt = evalc->add_option("--robust-iterations", eval_robust_iters);
    std::string guidance_warm, robust_warm;
    auto* gwarm_opt = evalc->add_option("--guidance-warm", guidance_warm)
                          ->check(CLI::IsMember({"zero", "ground_truth"}));
    auto* rwarm_opt = evalc->add_option("--robust-warm", robust_warm)
                          ->check(CLI::IsMember({"zero", "guidance"}));
    std::string embedder_kind, embeddings_path;
    auto* embedder_opt = evalc->add_option("--embedder", embedder_kind)
                             ->check(CLI::IsMember({"reference", "external"}));
    auto* embeddings_opt = evalc->add_option("--embeddings", embeddings_path);

    auto* renderc = app.add_subcommand("render", "Render a coefficient file to PPM");
    std::string render_basis, render_coeffs, render_bg;
    renderc->add_option("--basis", render_basis)->required();
    renderc->add_option("--coeffs", render_coeffs)->required();
    renderc->add_option("--background", render_bg);

    auto* objc = app.add_subcommand("export-obj", "Export a morphed mesh as OBJ");
    std::string obj_basis, obj_coeffs;
    objc->add_option("--basis", obj_basis)->required();
    objc->add_option("--coeffs", obj_coeffs);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        // CLI flags override file values only when actually supplied.
        if (seed_opt->count()) cfg.seed = std::stoull(seed_opt->results()[0]);
        if (out_opt->count()) cfg.out_dir = out_opt->results()[0];
        if (threads_opt->count()) cfg.threads = std::stoi(threads_opt->results()[0]);
        parallel::set_threads(cfg.threads);

        if (*synth) {
            if (vertices_opt->count()) cfg.basis_vertices = vertices;
            if (seed_opt->count()) cfg.basis_seed = cfg.seed;
            return run_synth_basis(cfg, synth_out);
        }
        if (*mkds) {
            cfg.basis_path = ds_basis;
            if (ident_opt->count()) cfg.dataset.identities = identities;
            if (per_opt->count()) cfg.dataset.per_identity = per_identity;
            if (unpaired_opt->count()) cfg.dataset.unpaired = unpaired;
            if (seed_opt->count()) cfg.dataset.seed = cfg.seed;
            cfg.validate();
            return run_make_dataset(cfg);
        }
        if (*fitc) {
            if (fit_iters_opt->count()) cfg.iterations = fit_iters;
            if (beta_c_opt->count()) cfg.weights.beta_c = beta_c;
            if (no_disc_opt->count()) cfg.use_discriminator = false;
            if (consistency_opt->count()) cfg.consistency = consistency;
            cfg.validate();
            return run_fit(cfg, triplet_path, fit_mode);
        }
        if (*evalc) {
            if (protocol_opt->count()) cfg.protocol = protocol;
            if (eval_fitter_opt->count()) cfg.eval_fitter = eval_fitter;
            if (eval_iters_opt->count()) cfg.iterations = eval_iters;
            if (eval_robust_opt->count()) cfg.robust_iterations = eval_robust_iters;
            if (gwarm_opt->count()) cfg.guidance_warm = guidance_warm;
            if (rwarm_opt->count()) cfg.robust_warm = robust_warm;
            if (embedder_opt->count()) cfg.embedder = embedder_kind;
            if (embeddings_opt->count()) cfg.embeddings_path = embeddings_path;
            cfg.validate();
            return run_eval(cfg, manifest_path);
        }
        if (*renderc) {
            cfg.basis_path = render_basis;
            cfg.validate();
            return run_render(cfg, render_coeffs, render_bg, cfg.out_dir);
        }
        if (*objc) {
            cfg.basis_path = obj_basis;
            return run_export_obj(cfg, obj_coeffs, cfg.out_dir);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const degenerate_render_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
