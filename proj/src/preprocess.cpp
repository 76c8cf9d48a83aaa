#include "vesselseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vesselseg/log.hpp"
#include "vesselseg/nifti.hpp"

namespace vseg {

namespace {

Index3 resampled_shape(const Volume& vol, const Vec3& target) {
    Index3 out;
    for (int a = 0; a < 3; ++a) {
        double extent = vol.dim(a) * vol.spacing[static_cast<std::size_t>(a)];
        out[static_cast<std::size_t>(a)] =
            static_cast<int>(std::llround(extent / target[static_cast<std::size_t>(a)]));
    }
    return out;
}

// Voxel-center mapping: out voxel i sits at physical (i+0.5)*t, which lands at
// input coordinate (i+0.5)*t/s - 0.5.
inline double src_coord(int i, double scale) { return (i + 0.5) * scale - 0.5; }

}  // namespace

Tensor resample_trilinear(const Tensor& src, const Index3& out_shape, const Vec3& scale) {
    const int D = src.extent(0), H = src.extent(1), W = src.extent(2);
    Tensor out({out_shape[0], out_shape[1], out_shape[2]});
#pragma omp parallel for schedule(static)
    for (int d = 0; d < out_shape[0]; ++d) {
        const double z = src_coord(d, scale[0]);
        const int z0 = std::clamp(static_cast<int>(std::floor(z)), 0, D - 1);
        const int z1 = std::min(z0 + 1, D - 1);
        const double fz = std::clamp(z - z0, 0.0, 1.0);
        for (int h = 0; h < out_shape[1]; ++h) {
            const double y = src_coord(h, scale[1]);
            const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, H - 1);
            const int y1 = std::min(y0 + 1, H - 1);
            const double fy = std::clamp(y - y0, 0.0, 1.0);
            for (int w = 0; w < out_shape[2]; ++w) {
                const double x = src_coord(w, scale[2]);
                const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, W - 1);
                const int x1 = std::min(x0 + 1, W - 1);
                const double fx = std::clamp(x - x0, 0.0, 1.0);

                const double c00 = src.at(z0, y0, x0) * (1 - fx) + src.at(z0, y0, x1) * fx;
                const double c01 = src.at(z0, y1, x0) * (1 - fx) + src.at(z0, y1, x1) * fx;
                const double c10 = src.at(z1, y0, x0) * (1 - fx) + src.at(z1, y0, x1) * fx;
                const double c11 = src.at(z1, y1, x0) * (1 - fx) + src.at(z1, y1, x1) * fx;
                out.at(d, h, w) = (c00 * (1 - fy) + c01 * fy) * (1 - fz) +
                                  (c10 * (1 - fy) + c11 * fy) * fz;
            }
        }
    }
    return out;
}

namespace serial {
// Reference implementation kept for kernel testing; identical math, no OpenMP.
Tensor resample_trilinear(const Tensor& src, const Index3& out_shape, const Vec3& scale) {
    const int D = src.extent(0), H = src.extent(1), W = src.extent(2);
    Tensor out({out_shape[0], out_shape[1], out_shape[2]});
    for (int d = 0; d < out_shape[0]; ++d)
        for (int h = 0; h < out_shape[1]; ++h)
            for (int w = 0; w < out_shape[2]; ++w) {
                const double z = src_coord(d, scale[0]);
                const double y = src_coord(h, scale[1]);
                const double x = src_coord(w, scale[2]);
                const int z0 = std::clamp(static_cast<int>(std::floor(z)), 0, D - 1);
                const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, H - 1);
                const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, W - 1);
                const int z1 = std::min(z0 + 1, D - 1);
                const int y1 = std::min(y0 + 1, H - 1);
                const int x1 = std::min(x0 + 1, W - 1);
                const double fz = std::clamp(z - z0, 0.0, 1.0);
                const double fy = std::clamp(y - y0, 0.0, 1.0);
                const double fx = std::clamp(x - x0, 0.0, 1.0);
                const double c00 = src.at(z0, y0, x0) * (1 - fx) + src.at(z0, y0, x1) * fx;
                const double c01 = src.at(z0, y1, x0) * (1 - fx) + src.at(z0, y1, x1) * fx;
                const double c10 = src.at(z1, y0, x0) * (1 - fx) + src.at(z1, y0, x1) * fx;
                const double c11 = src.at(z1, y1, x0) * (1 - fx) + src.at(z1, y1, x1) * fx;
                out.at(d, h, w) = (c00 * (1 - fy) + c01 * fy) * (1 - fz) +
                                  (c10 * (1 - fy) + c11 * fy) * fz;
            }
    return out;
}
}  // namespace serial

namespace {

Tensor resample_nearest(const Tensor& src, const Index3& out_shape, const Vec3& scale) {
    const int D = src.extent(0), H = src.extent(1), W = src.extent(2);
    Tensor out({out_shape[0], out_shape[1], out_shape[2]});
#pragma omp parallel for schedule(static)
    for (int d = 0; d < out_shape[0]; ++d)
        for (int h = 0; h < out_shape[1]; ++h)
            for (int w = 0; w < out_shape[2]; ++w) {
                int z = std::clamp(static_cast<int>(std::llround(src_coord(d, scale[0]))), 0, D - 1);
                int y = std::clamp(static_cast<int>(std::llround(src_coord(h, scale[1]))), 0, H - 1);
                int x = std::clamp(static_cast<int>(std::llround(src_coord(w, scale[2]))), 0, W - 1);
                out.at(d, h, w) = src.at(z, y, x);
            }
    return out;
}

}  // namespace

std::pair<Volume, std::optional<LabelMask>> resample_to_spacing(
    const Volume& vol, const std::optional<LabelMask>& mask, const Vec3& target_spacing,
    const ResampleOptions& opts) {
    for (double s : target_spacing)
        if (!(s > 0.0)) throw std::invalid_argument("target spacing must be positive");
    if (mask && !mask->data.same_shape(vol.data))
        throw std::invalid_argument("mask shape must match volume shape");

    if (vol.spacing == target_spacing) {
        return {vol, mask};  // identity short-circuit, bit-exact
    }

    const Index3 out_shape = resampled_shape(vol, target_spacing);
    for (int d : out_shape)
        if (d < 4) throw std::runtime_error("resampled volume would have a dimension below 4");

    Vec3 scale;
    for (int a = 0; a < 3; ++a)
        scale[static_cast<std::size_t>(a)] =
            target_spacing[static_cast<std::size_t>(a)] / vol.spacing[static_cast<std::size_t>(a)];

    Volume out_vol(resample_trilinear(vol.data, out_shape, scale), target_spacing, vol.origin);

    std::optional<LabelMask> out_mask;
    if (mask) {
        Tensor m;
        if (opts.mask_trilinear_threshold) {
            m = resample_trilinear(mask->data, out_shape, scale);
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] >= 0.5 ? 1.0 : 0.0;
        } else {
            m = resample_nearest(mask->data, out_shape, scale);
        }
        out_mask = LabelMask(std::move(m), target_spacing, mask->origin);
    }
    return {std::move(out_vol), std::move(out_mask)};
}

std::vector<Index3> patch_grid(const Index3& vol_shape, int patch_size, int stride) {
    std::vector<Index3> out;
    for (int d = 0; d + patch_size <= vol_shape[0]; d += stride)
        for (int h = 0; h + patch_size <= vol_shape[1]; h += stride)
            for (int w = 0; w + patch_size <= vol_shape[2]; w += stride)
                out.push_back({d, h, w});
    return out;
}

namespace {

Tensor crop_cube(const Tensor& src, const Index3& org, int p) {
    Tensor out({p, p, p});
    for (int d = 0; d < p; ++d)
        for (int h = 0; h < p; ++h)
            for (int w = 0; w < p; ++w)
                out.at(d, h, w) = src.at(org[0] + d, org[1] + h, org[2] + w);
    return out;
}

}  // namespace

PatchStreams extract_patches(const Volume& vol, const Volume& vessel_like, const LabelMask& mask,
                             const AnnotationExtent& extent, int patch_size, int stride) {
    if (stride <= 0 || patch_size <= 0) throw std::invalid_argument("patch size and stride must be positive");
    if (stride > patch_size) throw std::invalid_argument("stride must not exceed patch size (overlap required)");
    if (!vessel_like.data.same_shape(vol.data) || !mask.data.same_shape(vol.data))
        throw std::invalid_argument("volume, vessel-like and mask shapes must match");
    for (int a = 0; a < 3; ++a)
        if (patch_size > vol.dim(a))
            throw std::invalid_argument("patch size exceeds volume dimension");

    const Index3 ext_size = extent.sizes();
    if (ext_size[0] < patch_size || ext_size[1] < patch_size || ext_size[2] < patch_size)
        warn("extract_patches: annotation extent smaller than patch size, no labeled patches");

    PatchStreams out;
    for (const Index3& org : patch_grid({vol.dim(0), vol.dim(1), vol.dim(2)}, patch_size, stride)) {
        const bool inside = extent.contains_box(org, patch_size);
        const bool outside = extent.disjoint_box(org, patch_size);
        if (!inside && !outside) continue;  // straddling patches carry ambiguous labels

        Patch p;
        p.grid_origin = org;
        p.image = crop_cube(vol.data, org, patch_size);
        p.vessel_like = crop_cube(vessel_like.data, org, patch_size);
        if (inside) {
            p.group = PatchGroup::labeled;
            p.mask = crop_cube(mask.data, org, patch_size);
            out.labeled.push_back(std::move(p));
        } else {
            p.group = PatchGroup::unlabeled;
            out.unlabeled.push_back(std::move(p));
        }
    }
    return out;
}

namespace {

nlohmann::json origins_json(const std::vector<Index3>& v) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& o : v) j.push_back({o[0], o[1], o[2]});
    return j;
}

std::vector<Index3> origins_from_json(const nlohmann::json& j) {
    std::vector<Index3> out;
    for (const auto& e : j) out.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>()});
    return out;
}

}  // namespace

std::vector<CaseCacheEntry> preprocess_cases(const DatasetManifest& manifest,
                                             const PreprocessConfig& cfg,
                                             const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    DatasetManifest rewritten = manifest;
    std::vector<CaseCacheEntry> entries;
    for (auto& c : rewritten.cases) {
        Volume vol = load_volume(c.volume_path);
        LabelMask mask = load_mask(c.mask_path);

        auto [rvol, rmask] = resample_to_spacing(vol, mask, cfg.target_spacing, cfg.resample);
        Volume vessel_like = adaptive_histogram_attention(rvol, cfg.aha);
        AnnotationExtent extent = mask_bounding_box(*rmask);

        PatchStreams streams =
            extract_patches(rvol, vessel_like, *rmask, extent, cfg.patch_size, cfg.stride);

        const std::string case_dir = (fs::path(out_dir) / c.id).string();
        fs::create_directories(case_dir);
        save_volume(rvol, (fs::path(case_dir) / "image.nii.gz").string());
        save_volume(vessel_like, (fs::path(case_dir) / "vessel_like.nii.gz").string());
        save_mask(*rmask, (fs::path(case_dir) / "mask.nii.gz").string());
        if (c.full_mask_path) {
            LabelMask full = load_mask(*c.full_mask_path);
            auto [_, rfull] = resample_to_spacing(vol, full, cfg.target_spacing, cfg.resample);
            save_mask(*rfull, (fs::path(case_dir) / "full_mask.nii.gz").string());
        }

        CaseCacheEntry entry;
        entry.case_id = c.id;
        entry.dir = case_dir;
        for (const auto& p : streams.labeled) entry.labeled_origins.push_back(p.grid_origin);
        for (const auto& p : streams.unlabeled) entry.unlabeled_origins.push_back(p.grid_origin);

        nlohmann::json index;
        index["case_id"] = c.id;
        index["patch_size"] = cfg.patch_size;
        index["stride"] = cfg.stride;
        index["extent"] = {{"min", {extent.bbox_min[0], extent.bbox_min[1], extent.bbox_min[2]}},
                           {"max", {extent.bbox_max[0], extent.bbox_max[1], extent.bbox_max[2]}}};
        index["labeled"] = origins_json(entry.labeled_origins);
        index["unlabeled"] = origins_json(entry.unlabeled_origins);
        std::ofstream f(fs::path(case_dir) / "patches.json");
        f << index.dump(2) << "\n";

        c.volume_path = (fs::path(case_dir) / "image.nii.gz").string();
        c.mask_path = (fs::path(case_dir) / "mask.nii.gz").string();
        if (c.full_mask_path) c.full_mask_path = (fs::path(case_dir) / "full_mask.nii.gz").string();
        entries.push_back(std::move(entry));
    }
    save_manifest(rewritten, (fs::path(out_dir) / "manifest.json").string());
    return entries;
}

CachedCase load_cached_case(const std::string& case_dir) {
    namespace fs = std::filesystem;
    CachedCase c;
    c.image = load_volume((fs::path(case_dir) / "image.nii.gz").string());
    c.vessel_like = load_volume((fs::path(case_dir) / "vessel_like.nii.gz").string());
    c.mask = load_mask((fs::path(case_dir) / "mask.nii.gz").string());

    std::ifstream f(fs::path(case_dir) / "patches.json");
    if (!f) throw std::runtime_error("missing patch index in " + case_dir);
    nlohmann::json index;
    f >> index;
    c.patch_size = index.at("patch_size").get<int>();
    c.labeled_origins = origins_from_json(index.at("labeled"));
    c.unlabeled_origins = origins_from_json(index.at("unlabeled"));
    auto mn = index.at("extent").at("min");
    auto mx = index.at("extent").at("max");
    c.extent.bbox_min = {mn.at(0).get<int>(), mn.at(1).get<int>(), mn.at(2).get<int>()};
    c.extent.bbox_max = {mx.at(0).get<int>(), mx.at(1).get<int>(), mx.at(2).get<int>()};
    return c;
}

Patch cut_patch(const CachedCase& c, const Index3& origin, PatchGroup group) {
    Patch p;
    p.grid_origin = origin;
    p.group = group;
    p.image = crop_cube(c.image.data, origin, c.patch_size);
    p.vessel_like = crop_cube(c.vessel_like.data, origin, c.patch_size);
    if (group == PatchGroup::labeled) p.mask = crop_cube(c.mask.data, origin, c.patch_size);
    return p;
}

}  // namespace vseg
