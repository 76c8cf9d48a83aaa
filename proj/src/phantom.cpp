#include "vesselseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "vesselseg/log.hpp"
#include "vesselseg/nifti.hpp"
#include "vesselseg/rng.hpp"

namespace vseg {

void PhantomSpec::validate() const {
    if (grid_size < 16) throw std::invalid_argument("phantom grid must be at least 16");
    if (!(spacing_mm > 0.0)) throw std::invalid_argument("phantom spacing must be positive");
    if (tree_depth < 0) throw std::invalid_argument("tree depth must be nonnegative");
    if (!(trunk_radius_mm > 0.0) || !(radius_decay > 0.0) || radius_decay >= 1.0)
        throw std::invalid_argument("bad radius parameters");
    if (!(background.mean < tissue.mean) || !(tissue.mean < vessel.mean))
        throw std::invalid_argument("intensity band means must be ordered background < tissue < vessel");
    if (annotation_radius_mm < 0.0) throw std::invalid_argument("annotation radius must be >= 0");
}

namespace {

inline double segment_distance_sq(double px, double py, double pz, const Vec3& a, const Vec3& b) {
    const double abx = b[0] - a[0], aby = b[1] - a[1], abz = b[2] - a[2];
    const double apx = px - a[0], apy = py - a[1], apz = pz - a[2];
    const double ab2 = abx * abx + aby * aby + abz * abz;
    double t = ab2 > 0.0 ? (apx * abx + apy * aby + apz * abz) / ab2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = apx - t * abx, dy = apy - t * aby, dz = apz - t * abz;
    return dx * dx + dy * dy + dz * dz;
}

struct CapsuleBounds {
    int lo[3], hi[3];  // inclusive voxel range
    bool empty;
};

CapsuleBounds capsule_bounds(const Tensor& mask, const Vec3& p0, const Vec3& p1, double r,
                             double sp) {
    CapsuleBounds b{};
    b.empty = false;
    for (int a = 0; a < 3; ++a) {
        const double lo = std::min(p0[static_cast<std::size_t>(a)], p1[static_cast<std::size_t>(a)]) - r;
        const double hi = std::max(p0[static_cast<std::size_t>(a)], p1[static_cast<std::size_t>(a)]) + r;
        b.lo[a] = std::max(0, static_cast<int>(std::floor(lo / sp)));
        b.hi[a] = std::min(mask.extent(a) - 1, static_cast<int>(std::ceil(hi / sp)));
        if (b.lo[a] > b.hi[a]) b.empty = true;
    }
    return b;
}

}  // namespace

void rasterize_capsule(Tensor& mask, const Vec3& p0, const Vec3& p1, double radius_mm,
                       double spacing_mm) {
    const CapsuleBounds b = capsule_bounds(mask, p0, p1, radius_mm, spacing_mm);
    if (b.empty) return;
    const double r2 = radius_mm * radius_mm;
#pragma omp parallel for schedule(static)
    for (int d = b.lo[0]; d <= b.hi[0]; ++d)
        for (int h = b.lo[1]; h <= b.hi[1]; ++h)
            for (int w = b.lo[2]; w <= b.hi[2]; ++w)
                if (segment_distance_sq(d * spacing_mm, h * spacing_mm, w * spacing_mm, p0, p1) <= r2)
                    mask.at(d, h, w) = 1.0;
}

namespace serial {
void rasterize_capsule(Tensor& mask, const Vec3& p0, const Vec3& p1, double radius_mm,
                       double spacing_mm) {
    const CapsuleBounds b = capsule_bounds(mask, p0, p1, radius_mm, spacing_mm);
    if (b.empty) return;
    const double r2 = radius_mm * radius_mm;
    for (int d = b.lo[0]; d <= b.hi[0]; ++d)
        for (int h = b.lo[1]; h <= b.hi[1]; ++h)
            for (int w = b.lo[2]; w <= b.hi[2]; ++w)
                if (segment_distance_sq(d * spacing_mm, h * spacing_mm, w * spacing_mm, p0, p1) <= r2)
                    mask.at(d, h, w) = 1.0;
}
}  // namespace serial

namespace {

Vec3 normalized(const Vec3& v) {
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len == 0.0) return {1.0, 0.0, 0.0};
    return {v[0] / len, v[1] / len, v[2] / len};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// Rodrigues rotation of v around unit axis u by angle t.
Vec3 rotate(const Vec3& v, const Vec3& u, double t) {
    const double c = std::cos(t), s = std::sin(t);
    const Vec3 uxv = cross(u, v);
    const double ud = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    Vec3 out;
    for (int a = 0; a < 3; ++a)
        out[static_cast<std::size_t>(a)] = v[static_cast<std::size_t>(a)] * c +
                                           uxv[static_cast<std::size_t>(a)] * s +
                                           u[static_cast<std::size_t>(a)] * ud * (1.0 - c);
    return out;
}

Vec3 random_perpendicular(const Vec3& dir, Rng& rng) {
    // Any vector not collinear with dir works as a helper.
    Vec3 helper{rng.normal(), rng.normal(), rng.normal()};
    Vec3 p = cross(dir, helper);
    double len2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    while (len2 < 1e-12) {
        helper = {rng.normal(), rng.normal(), rng.normal()};
        p = cross(dir, helper);
        len2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    }
    return normalized(p);
}

struct TreeBuilder {
    const PhantomSpec& spec;
    Tensor& full;
    Tensor& partial;
    Rng& rng;
    double extent_mm;
    bool clipped = false;

    void grow(const Vec3& start, const Vec3& dir, double length, double radius, int depth) {
        Vec3 end{start[0] + dir[0] * length, start[1] + dir[1] * length,
                 start[2] + dir[2] * length};
        for (int a = 0; a < 3; ++a) {
            const double margin = radius + spec.spacing_mm;
            double& e = end[static_cast<std::size_t>(a)];
            if (e < margin || e > extent_mm - margin) {
                e = std::clamp(e, margin, extent_mm - margin);
                clipped = true;
            }
        }
        rasterize_capsule(full, start, end, radius, spec.spacing_mm);
        if (radius >= spec.annotation_radius_mm)
            rasterize_capsule(partial, start, end, radius, spec.spacing_mm);

        if (depth >= spec.tree_depth) return;
        const double a1 = deg(rng.uniform(spec.branch_angle_min_deg, spec.branch_angle_max_deg));
        const double a2 = deg(rng.uniform(spec.branch_angle_min_deg, spec.branch_angle_max_deg));
        const Vec3 axis = random_perpendicular(dir, rng);
        const Vec3 d1 = normalized(rotate(dir, axis, a1));
        const Vec3 d2 = normalized(rotate(dir, axis, -a2));
        const double child_len = length * spec.length_decay;
        const double child_rad = radius * spec.radius_decay;
        grow(end, d1, child_len, child_rad, depth + 1);
        grow(end, d2, child_len, child_rad, depth + 1);
    }

    static double deg(double d) { return d * M_PI / 180.0; }
};

}  // namespace

PhantomCase generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const int N = spec.grid_size;
    const double sp = spec.spacing_mm;
    const double extent_mm = (N - 1) * sp;

    Tensor full({N, N, N});
    Tensor partial({N, N, N});

    Rng tree_rng = Rng::fork(spec.seed, "phantom_tree");
    TreeBuilder builder{spec, full, partial, tree_rng, extent_mm};
    const Vec3 center{extent_mm / 2.0, extent_mm / 2.0, extent_mm / 2.0};
    const Vec3 trunk_start{center[0] - 0.32 * extent_mm, center[1], center[2]};
    builder.grow(trunk_start, Vec3{1.0, 0.0, 0.0}, spec.trunk_length_mm, spec.trunk_radius_mm, 0);
    if (builder.clipped) warn("generate_phantom: branches clipped at the grid boundary");

    // Tissue ellipsoid; background outside. Vessels always paint vessel band.
    const double ax = 0.46 * extent_mm, ay = 0.44 * extent_mm, az = 0.44 * extent_mm;
    Rng noise_rng = Rng::fork(spec.seed, "phantom_noise");
    Tensor intensity({N, N, N});
    for (int d = 0; d < N; ++d)
        for (int h = 0; h < N; ++h)
            for (int w = 0; w < N; ++w) {
                const double z = d * sp - center[0], y = h * sp - center[1], x = w * sp - center[2];
                const bool in_tissue =
                    (z * z) / (ax * ax) + (y * y) / (ay * ay) + (x * x) / (az * az) <= 1.0;
                const IntensityBand* band = &spec.background;
                if (full.at(d, h, w) != 0.0) band = &spec.vessel;
                else if (in_tissue) band = &spec.tissue;
                double v = noise_rng.normal(band->mean, band->sigma);
                if (spec.noise_sigma > 0.0) v += noise_rng.normal(0.0, spec.noise_sigma);
                intensity.at(d, h, w) = v;
            }

    PhantomCase out;
    out.volume = Volume(std::move(intensity), {sp, sp, sp});
    out.full_mask = LabelMask(std::move(full), {sp, sp, sp});
    out.partial_mask = LabelMask(std::move(partial), {sp, sp, sp});

    if (out.partial_mask.foreground_count() == 0)
        throw std::runtime_error(
            "generate_phantom: annotation threshold left the partial mask empty");

    AnnotationExtent ext = mask_bounding_box(out.partial_mask);
    for (int a = 0; a < 3; ++a) {
        ext.bbox_min[a] = std::max(0, ext.bbox_min[a] - 2);
        ext.bbox_max[a] = std::min(N, ext.bbox_max[a] + 2);
    }
    out.extent = ext;
    return out;
}

DatasetManifest phantom_suite(int n_cases, const PhantomSpec& base_spec, std::uint64_t seed,
                              const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (n_cases < 1) throw std::invalid_argument("phantom_suite: need at least one case");
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    for (int i = 0; i < n_cases; ++i) {
        PhantomSpec spec = base_spec;
        spec.seed = Rng::fork(seed, "phantom_case_" + std::to_string(i)).engine()();
        PhantomCase c = generate_phantom(spec);

        char name[32];
        std::snprintf(name, sizeof(name), "case_%02d", i);
        const std::string case_dir = (fs::path(out_dir) / name).string();
        fs::create_directories(case_dir);
        const std::string vol_path = (fs::path(case_dir) / "volume.nii.gz").string();
        const std::string mask_path = (fs::path(case_dir) / "mask.nii.gz").string();
        const std::string full_path = (fs::path(case_dir) / "full_mask.nii.gz").string();
        save_volume(c.volume, vol_path);
        save_mask(c.partial_mask, mask_path);
        save_mask(c.full_mask, full_path);

        CaseRecord rec;
        rec.id = name;
        rec.patient = std::string("patient_") + name;
        rec.volume_path = vol_path;
        rec.mask_path = mask_path;
        rec.full_mask_path = full_path;
        rec.center = "phantom";
        manifest.cases.push_back(std::move(rec));
    }
    save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

}  // namespace vseg
