#include "facefit/dataset.hpp"

#include "facefit/errors.hpp"
#include "facefit/io.hpp"
#include "facefit/parallel.hpp"
#include "facefit/pipeline.hpp"
#include "facefit/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace facefit {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t identity_seed(const DatasetParams& p, int identity) {
    return substream(substream(p.seed, 0x1DEAull), static_cast<std::uint64_t>(identity));
}

void draw_pose_illum(Rng& rng, const DatasetParams& p, CoeffVector& c) {
    auto pose = c.pose();
    pose[0] = rng.normal(0.0, p.pose_rot_std);
    pose[1] = rng.normal(0.0, p.pose_rot_std);
    pose[2] = rng.normal(0.0, p.pose_rot_std);
    pose[3] = rng.normal(0.0, p.pose_trans_std);
    pose[4] = rng.normal(0.0, p.pose_trans_std);
    pose[5] = kCanonicalDepth + rng.normal(0.0, p.pose_trans_std);
    auto illum = c.illumination();
    for (int ch = 0; ch < 3; ++ch) {
        illum[ch * 9] = p.illum_band0 + rng.normal(0.0, p.illum_jitter);
        for (int b = 1; b < 9; ++b) illum[ch * 9 + b] = rng.normal(0.0, 0.6 * p.illum_jitter);
    }
}

} // namespace

CoeffVector sample_gt_coefficients(const DatasetParams& params, int identity) {
    Rng rng(identity_seed(params, identity));
    CoeffVector c;
    for (double& v : c.shape()) v = rng.normal(0.0, params.shape_std);
    for (double& v : c.expression()) v = rng.normal(0.0, params.expr_std);
    for (double& v : c.texture()) v = rng.normal(0.0, params.tex_std);
    draw_pose_illum(rng, params, c);
    return c;
}

CoeffVector redraw_pose_illum(const DatasetParams& params, const CoeffVector& base, int identity) {
    Rng rng(substream(identity_seed(params, identity), 0xA17ull));
    CoeffVector c = base;
    draw_pose_illum(rng, params, c);
    return c;
}

TripletSample make_triplet(const MorphableBasis& basis, const Camera& camera,
                           const DatasetParams& params, int identity, int sample) {
    if (identity < 0 || sample < 0) throw std::invalid_argument("make_triplet: negative index");
    const std::uint64_t sample_seed =
        substream(identity_seed(params, identity), 1000 + static_cast<std::uint64_t>(sample));
    Rng rng(sample_seed);

    TripletSample t;
    t.identity = identity;
    t.sample = sample;
    t.gt_coeffs = sample_gt_coefficients(params, identity);
    t.gt_clean_coeffs =
        params.unpaired ? redraw_pose_illum(params, *t.gt_coeffs, identity) : *t.gt_coeffs;

    const RenderedFrame base_frame = render_face(basis, *t.gt_coeffs, camera, nullptr);
    const Image base_image = io::quantize_image(base_frame.rgb);
    if (params.unpaired) {
        const RenderedFrame clean_frame = render_face(basis, *t.gt_clean_coeffs, camera, nullptr);
        t.guiding = io::quantize_image(clean_frame.rgb);
    } else {
        t.guiding = base_image;
    }
    t.gt_landmarks = project_landmarks(basis, *t.gt_clean_coeffs, camera);

    const int cycle = identity * params.per_identity + sample;
    t.occlusion.shape = static_cast<OcclusionShape>(cycle % 3);
    t.occlusion.color_mode =
        sample % 2 == 0 ? OcclusionColor::kSolidSeeded : OcclusionColor::kPerPixelRandom;
    t.occlusion.coverage = rng.uniform(params.occ_coverage_lo, params.occ_coverage_hi);
    t.occlusion.seed = substream(sample_seed, 0x0CCull);
    OcclusionResult occ = overlay_occlusion(base_image, coverage_bbox(base_frame), t.occlusion);
    t.occluded = std::move(occ.image);
    t.occlusion_mask = std::move(occ.mask);

    t.noise.kind = static_cast<NoiseKind>(sample % 3);
    t.noise.sigma = t.noise.kind == NoiseKind::kSpeckle ? params.speckle_sigma : params.gauss_sigma;
    t.noise.p = params.salt_pepper_p;
    t.noise.seed = substream(sample_seed, 0x4015Eull);
    t.noisy = add_noise(base_image, t.noise);
    return t;
}

namespace {

json camera_to_json(const Camera& c) {
    return json{{"focal", c.focal}, {"cx", c.cx}, {"cy", c.cy},
                {"width", c.width}, {"height", c.height}};
}

Camera camera_from_json(const json& j) {
    Camera c;
    c.focal = j.at("focal").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    return c;
}

json params_to_json(const DatasetParams& p) {
    return json{{"identities", p.identities},
                {"per_identity", p.per_identity},
                {"seed", p.seed},
                {"unpaired", p.unpaired},
                {"occ_coverage_lo", p.occ_coverage_lo},
                {"occ_coverage_hi", p.occ_coverage_hi},
                {"gauss_sigma", p.gauss_sigma},
                {"salt_pepper_p", p.salt_pepper_p},
                {"speckle_sigma", p.speckle_sigma},
                {"shape_std", p.shape_std},
                {"expr_std", p.expr_std},
                {"tex_std", p.tex_std},
                {"pose_rot_std", p.pose_rot_std},
                {"pose_trans_std", p.pose_trans_std},
                {"illum_band0", p.illum_band0},
                {"illum_jitter", p.illum_jitter}};
}

DatasetParams params_from_json(const json& j) {
    DatasetParams p;
    p.identities = j.at("identities").get<int>();
    p.per_identity = j.at("per_identity").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.unpaired = j.at("unpaired").get<bool>();
    p.occ_coverage_lo = j.at("occ_coverage_lo").get<double>();
    p.occ_coverage_hi = j.at("occ_coverage_hi").get<double>();
    p.gauss_sigma = j.at("gauss_sigma").get<double>();
    p.salt_pepper_p = j.at("salt_pepper_p").get<double>();
    p.speckle_sigma = j.at("speckle_sigma").get<double>();
    p.shape_std = j.at("shape_std").get<double>();
    p.expr_std = j.at("expr_std").get<double>();
    p.tex_std = j.at("tex_std").get<double>();
    p.pose_rot_std = j.at("pose_rot_std").get<double>();
    p.pose_trans_std = j.at("pose_trans_std").get<double>();
    p.illum_band0 = j.at("illum_band0").get<double>();
    p.illum_jitter = j.at("illum_jitter").get<double>();
    return p;
}

std::string id_dir(int identity) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "id_%03d", identity);
    return buf;
}

std::string sample_dir(int identity, int sample) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "id_%03d/s_%02d", identity, sample);
    return buf;
}

Image mask_to_image(const std::vector<unsigned char>& mask, int w, int h) {
    Image img(w, h, 0.0);
    for (std::size_t p = 0; p < mask.size(); ++p)
        if (mask[p]) img.data[3 * p] = img.data[3 * p + 1] = img.data[3 * p + 2] = 1.0;
    return img;
}

} // namespace

Manifest build_triplet_dataset(const MorphableBasis& basis, const Camera& camera,
                               const DatasetParams& params, const std::string& out_dir,
                               const std::string& basis_path) {
    if (params.identities <= 0 || params.per_identity <= 0)
        throw std::invalid_argument("build_triplet_dataset: counts must be positive");
    camera.validate();

    Manifest manifest;
    manifest.seed = params.seed;
    manifest.camera = camera;
    manifest.params = params;
    manifest.basis_path = basis_path;
    manifest.entries.resize(static_cast<std::size_t>(params.identities) * params.per_identity);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    for (int i = 0; i < params.identities; ++i)
        fs::create_directories(fs::path(out_dir) / id_dir(i), ec);
    for (int i = 0; i < params.identities; ++i)
        for (int j = 0; j < params.per_identity; ++j)
            fs::create_directories(fs::path(out_dir) / sample_dir(i, j), ec);

    const std::int64_t total =
        static_cast<std::int64_t>(params.identities) * params.per_identity;
    parallel::for_each_index(total, [&](std::int64_t k) {
        const int identity = static_cast<int>(k / params.per_identity);
        const int sample = static_cast<int>(k % params.per_identity);
        const TripletSample t = make_triplet(basis, camera, params, identity, sample);

        const std::string idp = id_dir(identity);
        const std::string sp = sample_dir(identity, sample);
        ManifestEntry& e = manifest.entries[static_cast<std::size_t>(k)];
        e.identity = identity;
        e.sample = sample;
        e.clean_path = idp + "/clean.ppm";
        e.gt_clean_path = idp + "/gt_clean.rgcv";
        e.occluded_path = sp + "/occluded.ppm";
        e.noisy_path = sp + "/noisy.ppm";
        e.mask_path = sp + "/mask.ppm";
        e.gt_degraded_path = sp + "/gt.rgcv";
        e.triplet_json_path = sp + "/triplet.json";

        // The per-identity clean image is shared; sample 0 writes it.
        if (sample == 0) {
            io::write_ppm(t.guiding, (fs::path(out_dir) / e.clean_path).string());
            io::write_coeffs(*t.gt_clean_coeffs, (fs::path(out_dir) / e.gt_clean_path).string());
        }
        io::write_ppm(t.occluded, (fs::path(out_dir) / e.occluded_path).string());
        io::write_ppm(t.noisy, (fs::path(out_dir) / e.noisy_path).string());
        io::write_ppm(mask_to_image(t.occlusion_mask, camera.width, camera.height),
                      (fs::path(out_dir) / e.mask_path).string());
        io::write_coeffs(*t.gt_coeffs, (fs::path(out_dir) / e.gt_degraded_path).string());

        json tj;
        tj["identity"] = identity;
        tj["sample"] = sample;
        tj["clean"] = "../clean.ppm";
        tj["occluded"] = "occluded.ppm";
        tj["noisy"] = "noisy.ppm";
        tj["mask"] = "mask.ppm";
        tj["gt_clean"] = "../gt_clean.rgcv";
        tj["gt_degraded"] = "gt.rgcv";
        tj["occlusion"] = {{"shape", static_cast<int>(t.occlusion.shape)},
                           {"color_mode", static_cast<int>(t.occlusion.color_mode)},
                           {"coverage", t.occlusion.coverage},
                           {"seed", t.occlusion.seed}};
        tj["noise"] = {{"kind", static_cast<int>(t.noise.kind)},
                       {"sigma", t.noise.sigma},
                       {"p", t.noise.p},
                       {"seed", t.noise.seed}};
        json lm = json::array();
        for (const auto& pt : t.gt_landmarks->points) {
            lm.push_back(pt[0]);
            lm.push_back(pt[1]);
        }
        tj["landmarks"] = lm;
        io::write_text((fs::path(out_dir) / e.triplet_json_path).string(), tj.dump(2) + "\n");
    });

    write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

void write_manifest(const Manifest& manifest, const std::string& path) {
    json j;
    j["version"] = manifest.version;
    j["seed"] = manifest.seed;
    j["camera"] = camera_to_json(manifest.camera);
    j["params"] = params_to_json(manifest.params);
    j["basis"] = manifest.basis_path;
    json entries = json::array();
    for (const ManifestEntry& e : manifest.entries) {
        entries.push_back({{"identity", e.identity},
                           {"sample", e.sample},
                           {"clean", e.clean_path},
                           {"occluded", e.occluded_path},
                           {"noisy", e.noisy_path},
                           {"mask", e.mask_path},
                           {"gt_clean", e.gt_clean_path},
                           {"gt_degraded", e.gt_degraded_path},
                           {"triplet", e.triplet_json_path}});
    }
    j["entries"] = std::move(entries);
    io::write_text(path, j.dump(2) + "\n");
}

Manifest read_manifest(const std::string& path) {
    const std::vector<unsigned char> bytes = io::read_file(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const std::exception& e) {
        throw io_error(path + ": " + e.what());
    }
    Manifest m;
    m.version = j.at("version").get<std::uint32_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.camera = camera_from_json(j.at("camera"));
    m.params = params_from_json(j.at("params"));
    m.basis_path = j.at("basis").get<std::string>();
    for (const json& e : j.at("entries")) {
        ManifestEntry entry;
        entry.identity = e.at("identity").get<int>();
        entry.sample = e.at("sample").get<int>();
        entry.clean_path = e.at("clean").get<std::string>();
        entry.occluded_path = e.at("occluded").get<std::string>();
        entry.noisy_path = e.at("noisy").get<std::string>();
        entry.mask_path = e.at("mask").get<std::string>();
        entry.gt_clean_path = e.at("gt_clean").get<std::string>();
        entry.gt_degraded_path = e.at("gt_degraded").get<std::string>();
        entry.triplet_json_path = e.at("triplet").get<std::string>();
        m.entries.push_back(std::move(entry));
    }
    return m;
}

TripletSample load_triplet_file(const std::string& triplet_json_path) {
    const fs::path dir = fs::path(triplet_json_path).parent_path();
    const std::vector<unsigned char> tj_bytes = io::read_file(triplet_json_path);
    json tj;
    try {
        tj = json::parse(tj_bytes.begin(), tj_bytes.end());
    } catch (const std::exception& e) {
        throw io_error(triplet_json_path + ": " + e.what());
    }
    TripletSample t;
    t.identity = tj.at("identity").get<int>();
    t.sample = tj.at("sample").get<int>();
    t.guiding = io::read_ppm((dir / tj.at("clean").get<std::string>()).string());
    t.occluded = io::read_ppm((dir / tj.at("occluded").get<std::string>()).string());
    t.noisy = io::read_ppm((dir / tj.at("noisy").get<std::string>()).string());
    const Image mask = io::read_ppm((dir / tj.at("mask").get<std::string>()).string());
    t.occlusion_mask.resize(mask.pixel_count());
    for (std::size_t p = 0; p < t.occlusion_mask.size(); ++p)
        t.occlusion_mask[p] = mask.data[3 * p] > 0.5 ? 1 : 0;
    t.gt_coeffs = io::read_coeffs((dir / tj.at("gt_degraded").get<std::string>()).string());
    t.gt_clean_coeffs = io::read_coeffs((dir / tj.at("gt_clean").get<std::string>()).string());
    const json& lm = tj.at("landmarks");
    if (lm.size() != 136) throw io_error(triplet_json_path + ": bad landmark count");
    LandmarkSet lms;
    for (int k = 0; k < 68; ++k)
        lms.points[k] = {lm[2 * k].get<double>(), lm[2 * k + 1].get<double>()};
    t.gt_landmarks = lms;
    t.occlusion.shape = static_cast<OcclusionShape>(tj.at("occlusion").at("shape").get<int>());
    t.occlusion.color_mode =
        static_cast<OcclusionColor>(tj.at("occlusion").at("color_mode").get<int>());
    t.occlusion.coverage = tj.at("occlusion").at("coverage").get<double>();
    t.occlusion.seed = tj.at("occlusion").at("seed").get<std::uint64_t>();
    t.noise.kind = static_cast<NoiseKind>(tj.at("noise").at("kind").get<int>());
    t.noise.sigma = tj.at("noise").at("sigma").get<double>();
    t.noise.p = tj.at("noise").at("p").get<double>();
    t.noise.seed = tj.at("noise").at("seed").get<std::uint64_t>();
    return t;
}

TripletSample load_triplet(const Manifest& manifest, const std::string& manifest_dir,
                           std::size_t index) {
    if (index >= manifest.entries.size())
        throw std::invalid_argument("load_triplet: index out of range");
    const ManifestEntry& e = manifest.entries[index];
    return load_triplet_file((fs::path(manifest_dir) / e.triplet_json_path).string());
}

CleanReference load_clean_reference(const Manifest& manifest, const std::string& manifest_dir,
                                    int identity) {
    const std::size_t base =
        static_cast<std::size_t>(identity) * manifest.params.per_identity;
    if (base >= manifest.entries.size())
        throw std::invalid_argument("load_clean_reference: identity out of range");
    const ManifestEntry& e = manifest.entries[base];
    const fs::path dir(manifest_dir);
    CleanReference ref;
    ref.guiding = io::read_ppm((dir / e.clean_path).string());
    ref.gt_clean = io::read_coeffs((dir / e.gt_clean_path).string());
    const std::vector<unsigned char> tj_bytes =
        io::read_file((dir / e.triplet_json_path).string());
    json tj;
    try {
        tj = json::parse(tj_bytes.begin(), tj_bytes.end());
    } catch (const std::exception& ex) {
        throw io_error(e.triplet_json_path + ": " + ex.what());
    }
    const json& lm = tj.at("landmarks");
    if (lm.size() != 136) throw io_error(e.triplet_json_path + ": bad landmark count");
    for (int k = 0; k < 68; ++k)
        ref.landmarks.points[k] = {lm[2 * k].get<double>(), lm[2 * k + 1].get<double>()};
    return ref;
}

} // namespace facefit
