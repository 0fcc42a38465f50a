#include "facefit/config.hpp"

#include "facefit/errors.hpp"
#include "facefit/io.hpp"

#include <json.hpp>

#include <cstdio>
#include <set>
#include <stdexcept>

namespace facefit {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + where + it.key() + "'");
}

template <class T>
void maybe(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

} // namespace

void RunConfig::validate() const {
    weights.validate();
    camera.validate();
    if (iterations < 0 || dataset.identities <= 0 || dataset.per_identity <= 0)
        throw std::invalid_argument("config: counts must be positive");
    if (consistency != "adversarial" && consistency != "l2")
        throw std::invalid_argument("config: consistency must be adversarial or l2");
    if (protocol != "real_unpaired" && protocol != "synthetic_paired" && protocol != "noise")
        throw std::invalid_argument("config: unknown protocol " + protocol);
    if (eval_fitter != "rogue" && eval_fitter != "naive")
        throw std::invalid_argument("config: eval fitter must be rogue or naive");
    if (embedder != "reference" && embedder != "external")
        throw std::invalid_argument("config: embedder must be reference or external");
    if (guidance_warm != "zero" && guidance_warm != "ground_truth")
        throw std::invalid_argument("config: guidance_warm must be zero or ground_truth");
    if (robust_warm != "zero" && robust_warm != "guidance")
        throw std::invalid_argument("config: robust_warm must be zero or guidance");
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    const std::vector<unsigned char> bytes = io::read_file(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const std::exception& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
    reject_unknown(j, {"basis", "camera", "weights", "fitter", "dataset", "eval", "seed",
                       "out_dir", "threads"},
                   "");
    if (j.contains("basis")) {
        const json& b = j.at("basis");
        reject_unknown(b, {"path", "vertices", "seed"}, "basis.");
        maybe(b, "path", cfg.basis_path);
        maybe(b, "vertices", cfg.basis_vertices);
        maybe(b, "seed", cfg.basis_seed);
    }
    if (j.contains("camera")) {
        const json& c = j.at("camera");
        reject_unknown(c, {"focal", "cx", "cy", "width", "height"}, "camera.");
        maybe(c, "focal", cfg.camera.focal);
        maybe(c, "cx", cfg.camera.cx);
        maybe(c, "cy", cfg.camera.cy);
        maybe(c, "width", cfg.camera.width);
        maybe(c, "height", cfg.camera.height);
    }
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        reject_unknown(w, {"alpha_k", "alpha_gp", "alpha_p", "alpha_r", "beta_o", "beta_n",
                           "beta_c", "w_s", "w_t", "w_e", "huber_delta"},
                       "weights.");
        maybe(w, "alpha_k", cfg.weights.alpha_k);
        maybe(w, "alpha_gp", cfg.weights.alpha_gp);
        maybe(w, "alpha_p", cfg.weights.alpha_p);
        maybe(w, "alpha_r", cfg.weights.alpha_r);
        maybe(w, "beta_o", cfg.weights.beta_o);
        maybe(w, "beta_n", cfg.weights.beta_n);
        maybe(w, "beta_c", cfg.weights.beta_c);
        maybe(w, "w_s", cfg.weights.w_s);
        maybe(w, "w_t", cfg.weights.w_t);
        maybe(w, "w_e", cfg.weights.w_e);
        maybe(w, "huber_delta", cfg.weights.huber_delta);
    }
    if (j.contains("fitter")) {
        const json& f = j.at("fitter");
        reject_unknown(f, {"iterations", "robust_iterations", "lr", "lr_final_frac", "robust_lr",
                           "disc_lr", "consistency", "use_discriminator", "polish",
                           "guidance_warm", "robust_warm"},
                       "fitter.");
        maybe(f, "iterations", cfg.iterations);
        maybe(f, "robust_iterations", cfg.robust_iterations);
        maybe(f, "lr", cfg.lr);
        maybe(f, "lr_final_frac", cfg.lr_final_frac);
        maybe(f, "robust_lr", cfg.robust_lr);
        maybe(f, "disc_lr", cfg.disc_lr);
        maybe(f, "consistency", cfg.consistency);
        maybe(f, "use_discriminator", cfg.use_discriminator);
        maybe(f, "polish", cfg.polish);
        maybe(f, "guidance_warm", cfg.guidance_warm);
        maybe(f, "robust_warm", cfg.robust_warm);
    }
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        reject_unknown(d, {"identities", "per_identity", "seed", "unpaired", "occ_coverage_lo",
                           "occ_coverage_hi", "gauss_sigma", "salt_pepper_p", "speckle_sigma",
                           "shape_std", "expr_std", "tex_std", "pose_rot_std", "pose_trans_std",
                           "illum_band0", "illum_jitter"},
                       "dataset.");
        maybe(d, "identities", cfg.dataset.identities);
        maybe(d, "per_identity", cfg.dataset.per_identity);
        maybe(d, "seed", cfg.dataset.seed);
        maybe(d, "unpaired", cfg.dataset.unpaired);
        maybe(d, "occ_coverage_lo", cfg.dataset.occ_coverage_lo);
        maybe(d, "occ_coverage_hi", cfg.dataset.occ_coverage_hi);
        maybe(d, "gauss_sigma", cfg.dataset.gauss_sigma);
        maybe(d, "salt_pepper_p", cfg.dataset.salt_pepper_p);
        maybe(d, "speckle_sigma", cfg.dataset.speckle_sigma);
        maybe(d, "shape_std", cfg.dataset.shape_std);
        maybe(d, "expr_std", cfg.dataset.expr_std);
        maybe(d, "tex_std", cfg.dataset.tex_std);
        maybe(d, "pose_rot_std", cfg.dataset.pose_rot_std);
        maybe(d, "pose_trans_std", cfg.dataset.pose_trans_std);
        maybe(d, "illum_band0", cfg.dataset.illum_band0);
        maybe(d, "illum_jitter", cfg.dataset.illum_jitter);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        reject_unknown(e, {"protocol", "fitter", "embedder", "embeddings_path", "embedder_seed"},
                       "eval.");
        maybe(e, "protocol", cfg.protocol);
        maybe(e, "fitter", cfg.eval_fitter);
        maybe(e, "embedder", cfg.embedder);
        maybe(e, "embeddings_path", cfg.embeddings_path);
        maybe(e, "embedder_seed", cfg.embedder_seed);
    }
    maybe(j, "seed", cfg.seed);
    maybe(j, "out_dir", cfg.out_dir);
    maybe(j, "threads", cfg.threads);
}

std::string canonical_config(const RunConfig& cfg) {
    json j;
    j["basis"] = {{"path", cfg.basis_path}, {"vertices", cfg.basis_vertices},
                  {"seed", cfg.basis_seed}};
    j["camera"] = {{"focal", cfg.camera.focal}, {"cx", cfg.camera.cx}, {"cy", cfg.camera.cy},
                   {"width", cfg.camera.width}, {"height", cfg.camera.height}};
    j["weights"] = {{"alpha_k", cfg.weights.alpha_k}, {"alpha_gp", cfg.weights.alpha_gp},
                    {"alpha_p", cfg.weights.alpha_p}, {"alpha_r", cfg.weights.alpha_r},
                    {"beta_o", cfg.weights.beta_o},   {"beta_n", cfg.weights.beta_n},
                    {"beta_c", cfg.weights.beta_c},   {"w_s", cfg.weights.w_s},
                    {"w_t", cfg.weights.w_t},         {"w_e", cfg.weights.w_e},
                    {"huber_delta", cfg.weights.huber_delta}};
    j["fitter"] = {{"iterations", cfg.iterations},
                   {"robust_iterations", cfg.robust_iterations},
                   {"lr", cfg.lr},
                   {"lr_final_frac", cfg.lr_final_frac},
                   {"robust_lr", cfg.robust_lr},
                   {"disc_lr", cfg.disc_lr},
                   {"consistency", cfg.consistency},
                   {"use_discriminator", cfg.use_discriminator},
                   {"polish", cfg.polish},
                   {"guidance_warm", cfg.guidance_warm},
                   {"robust_warm", cfg.robust_warm}};
    j["dataset"] = {{"identities", cfg.dataset.identities},
                    {"per_identity", cfg.dataset.per_identity},
                    {"seed", cfg.dataset.seed},
                    {"unpaired", cfg.dataset.unpaired},
                    {"occ_coverage_lo", cfg.dataset.occ_coverage_lo},
                    {"occ_coverage_hi", cfg.dataset.occ_coverage_hi},
                    {"gauss_sigma", cfg.dataset.gauss_sigma},
                    {"salt_pepper_p", cfg.dataset.salt_pepper_p},
                    {"speckle_sigma", cfg.dataset.speckle_sigma},
                    {"shape_std", cfg.dataset.shape_std},
                    {"expr_std", cfg.dataset.expr_std},
                    {"tex_std", cfg.dataset.tex_std},
                    {"pose_rot_std", cfg.dataset.pose_rot_std},
                    {"pose_trans_std", cfg.dataset.pose_trans_std},
                    {"illum_band0", cfg.dataset.illum_band0},
                    {"illum_jitter", cfg.dataset.illum_jitter}};
    j["eval"] = {{"protocol", cfg.protocol},
                 {"fitter", cfg.eval_fitter},
                 {"embedder", cfg.embedder},
                 {"embeddings_path", cfg.embeddings_path},
                 {"embedder_seed", cfg.embedder_seed}};
    j["seed"] = cfg.seed;
    return j.dump();
}

std::string config_hash(const RunConfig& cfg) {
    const std::string canon = canonical_config(cfg);
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace facefit
