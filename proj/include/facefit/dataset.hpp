#pragma once

#include "facefit/degrade.hpp"
#include "facefit/mm.hpp"
#include "facefit/render.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace facefit {

struct DatasetParams {
    int identities = 50;
    int per_identity = 10;
    std::uint64_t seed = 0;
    bool unpaired = false; // redraw the clean reference's pose and illumination
    double occ_coverage_lo = 0.3;
    double occ_coverage_hi = 0.5;
    double gauss_sigma = 0.1;
    double salt_pepper_p = 0.05;
    double speckle_sigma = 0.2;
    double shape_std = 0.3;
    double expr_std = 0.2;
    double tex_std = 0.3;
    double pose_rot_std = 0.05;
    double pose_trans_std = 0.05;
    double illum_band0 = 3.2;
    double illum_jitter = 0.1;
};

/// Ground-truth coefficient draw for (identity, sample). sample < 0 draws the
/// identity's base coefficients; in unpaired mode the clean reference comes
/// from redraw_pose_illum of the base.
CoeffVector sample_gt_coefficients(const DatasetParams& params, int identity);
CoeffVector redraw_pose_illum(const DatasetParams& params, const CoeffVector& base, int identity);

/// Builds one triplet in memory. Images are quantized to the 8-bit grid so
/// in-memory results match a write/read through PPM exactly.
TripletSample make_triplet(const MorphableBasis& basis, const Camera& camera,
                           const DatasetParams& params, int identity, int sample);

struct ManifestEntry {
    int identity = 0;
    int sample = 0;
    std::string clean_path;
    std::string occluded_path;
    std::string noisy_path;
    std::string mask_path;
    std::string gt_clean_path;
    std::string gt_degraded_path;
    std::string triplet_json_path;
};

struct Manifest {
    std::uint32_t version = 1;
    std::uint64_t seed = 0;
    Camera camera;
    DatasetParams params;
    std::string basis_path;
    std::vector<ManifestEntry> entries;
};

/// Renders the full identities x per_identity grid to out_dir and writes
/// manifest.json. Returns the manifest. Sample generation is parallel across
/// samples; all content is a pure function of (params, camera, basis).
Manifest build_triplet_dataset(const MorphableBasis& basis, const Camera& camera,
                               const DatasetParams& params, const std::string& out_dir,
                               const std::string& basis_path);

Manifest read_manifest(const std::string& path);
void write_manifest(const Manifest& manifest, const std::string& path);

/// Loads one triplet (images, ground truth, landmarks) from manifest entry
/// paths, which are stored relative to the manifest's directory.
TripletSample load_triplet(const Manifest& manifest, const std::string& manifest_dir,
                           std::size_t index);

/// Loads a triplet straight from its triplet.json (paths inside are relative
/// to that file's directory).
TripletSample load_triplet_file(const std::string& triplet_json_path);

/// The per-identity clean reference: guiding image, its landmarks and ground
/// truth. Reads only the clean-side files so degraded-file corruption cannot
/// fail the guidance fit.
struct CleanReference {
    Image guiding;
    LandmarkSet landmarks;
    CoeffVector gt_clean;
};

CleanReference load_clean_reference(const Manifest& manifest, const std::string& manifest_dir,
                                    int identity);

} // namespace facefit
