#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vesselseg/histogram.hpp"
#include "vesselseg/manifest.hpp"
#include "vesselseg/volume.hpp"

namespace vseg {

enum class PatchGroup { labeled, unlabeled };

/// Fixed-size cubic sub-volume cut from a case, together with its
/// background-normalized twin and, for labeled patches, the mask crop.
struct Patch {
    Tensor image;        // (p,p,p) raw intensities
    Tensor vessel_like;  // (p,p,p) in [0,1]
    std::optional<Tensor> mask;  // present iff group == labeled
    Index3 grid_origin{0, 0, 0};
    PatchGroup group = PatchGroup::unlabeled;
};

struct ResampleOptions {
    // Masks default to nearest-neighbour so binarity is preserved; the
    // trilinear+threshold alternative is available behind this switch.
    bool mask_trilinear_threshold = false;
};

/// Resolution standardization: trilinear for the image, nearest-neighbour for
/// the mask. Output shape is round(shape * spacing / target) per axis.
/// Identity when the spacing already matches. Throws if any output dimension
/// would fall below 4.
std::pair<Volume, std::optional<LabelMask>> resample_to_spacing(
    const Volume& vol, const std::optional<LabelMask>& mask, const Vec3& target_spacing,
    const ResampleOptions& opts = {});

/// Overlapped sliding-grid patch extraction split into labeled/unlabeled
/// streams. A grid patch is labeled iff its box lies entirely inside the
/// extent and unlabeled iff the intersection is empty; straddling patches are
/// discarded. Labeled patches carry the mask crop.
struct PatchStreams {
    std::vector<Patch> labeled;
    std::vector<Patch> unlabeled;
};

PatchStreams extract_patches(const Volume& vol, const Volume& vessel_like, const LabelMask& mask,
                             const AnnotationExtent& extent, int patch_size, int stride);

/// Grid origins visited by extract_patches (exposed for the cache index).
std::vector<Index3> patch_grid(const Index3& vol_shape, int patch_size, int stride);

/// Trilinear resampling kernel (OpenMP). `scale[a]` is target/source spacing.
Tensor resample_trilinear(const Tensor& src, const Index3& out_shape, const Vec3& scale);

namespace serial {
/// Reference implementation, compared against the parallel kernel in tests.
Tensor resample_trilinear(const Tensor& src, const Index3& out_shape, const Vec3& scale);
}  // namespace serial

/// Preprocessed-case cache: one directory per case holding the resampled
/// volume, its vessel-like twin, the mask, and a JSON patch index.
struct PreprocessConfig {
    Vec3 target_spacing{0.35, 0.35, 0.35};
    int patch_size = 32;
    int stride = 16;  // default 50% overlap
    AhaParams aha;
    ResampleOptions resample;
};

struct CaseCacheEntry {
    std::string case_id;
    std::string dir;
    std::vector<Index3> labeled_origins;
    std::vector<Index3> unlabeled_origins;
};

/// Runs resample + AHA + patch grouping for every case in the manifest and
/// writes the cache under out_dir. Returns the written entries and saves a
/// manifest copy (paths rewritten to the cache) as out_dir/manifest.json.
std::vector<CaseCacheEntry> preprocess_cases(const DatasetManifest& manifest,
                                             const PreprocessConfig& cfg,
                                             const std::string& out_dir);

/// Loads one case back from the cache.
struct CachedCase {
    Volume image;
    Volume vessel_like;
    LabelMask mask;
    AnnotationExtent extent;
    std::vector<Index3> labeled_origins;
    std::vector<Index3> unlabeled_origins;
    int patch_size = 0;
};

CachedCase load_cached_case(const std::string& case_dir);

/// Cuts the patch at a cached grid origin.
Patch cut_patch(const CachedCase& c, const Index3& origin, PatchGroup group);

}  // namespace vseg
