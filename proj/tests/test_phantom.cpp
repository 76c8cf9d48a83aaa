#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "vesselseg/histogram.hpp"
#include "vesselseg/nifti.hpp"
#include "vesselseg/phantom.hpp"
#include "vesselseg/rng.hpp"

using namespace vseg;
namespace fs = std::filesystem;

namespace {

PhantomSpec desk_spec(std::uint64_t seed = 1) {
    PhantomSpec s;
    s.grid_size = 48;
    s.seed = seed;
    return s;
}

bool masks_equal(const LabelMask& a, const LabelMask& b) {
    if (!a.data.same_shape(b.data)) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != b.data[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("trunk-only tree with radius above the threshold has partial == full") {
    PhantomSpec s = desk_spec(2);
    s.tree_depth = 0;
    s.annotation_radius_mm = s.trunk_radius_mm - 0.1;
    PhantomCase c = generate_phantom(s);
    CHECK(masks_equal(c.partial_mask, c.full_mask));
}

TEST_CASE("zero annotation threshold labels everything") {
    PhantomSpec s = desk_spec(3);
    s.annotation_radius_mm = 0.0;
    PhantomCase c = generate_phantom(s);
    CHECK(masks_equal(c.partial_mask, c.full_mask));
}

TEST_CASE("threshold above every branch radius fails loudly") {
    PhantomSpec s = desk_spec(4);
    s.annotation_radius_mm = 100.0;
    CHECK_THROWS_AS(generate_phantom(s), std::runtime_error);
}

TEST_CASE("partial mask is always a subset of the full mask") {
    for (std::uint64_t seed : {5ull, 6ull, 7ull}) {
        PhantomCase c = generate_phantom(desk_spec(seed));
        for (std::size_t i = 0; i < c.full_mask.data.size(); ++i)
            if (c.partial_mask.data[i] != 0.0) CHECK(c.full_mask.data[i] != 0.0);
        CHECK(c.partial_mask.foreground_count() < c.full_mask.foreground_count());
    }
}

TEST_CASE("generation is deterministic per seed") {
    PhantomCase a = generate_phantom(desk_spec(8));
    PhantomCase b = generate_phantom(desk_spec(8));
    CHECK(masks_equal(a.full_mask, b.full_mask));
    for (std::size_t i = 0; i < a.volume.data.size(); ++i)
        CHECK(a.volume.data[i] == b.volume.data[i]);

    PhantomCase other = generate_phantom(desk_spec(9));
    bool identical = true;
    for (std::size_t i = 0; i < a.volume.data.size() && identical; ++i)
        identical = a.volume.data[i] == other.volume.data[i];
    CHECK_FALSE(identical);
}

TEST_CASE("extent is the partial-mask bbox dilated by two voxels, clipped") {
    PhantomCase c = generate_phantom(desk_spec(10));
    AnnotationExtent tight = mask_bounding_box(c.partial_mask);
    for (int a = 0; a < 3; ++a) {
        CHECK(c.extent.bbox_min[a] == std::max(0, tight.bbox_min[a] - 2));
        CHECK(c.extent.bbox_max[a] == std::min(c.volume.dim(a), tight.bbox_max[a] + 2));
    }
}

TEST_CASE("vessel voxel fraction stays small") {
    PhantomCase c = generate_phantom(desk_spec(11));
    const double frac = static_cast<double>(c.full_mask.foreground_count()) /
                        static_cast<double>(c.full_mask.data.size());
    CHECK(frac > 0.0);
    CHECK(frac < 0.05);
}

TEST_CASE("generated volumes have a trimodal histogram") {
    PhantomCase c = generate_phantom(desk_spec(12));
    AhaParams params;
    Histogram h = compute_histogram(c.volume, params.bins);
    auto s = smooth_counts(h, params.smoothing_window);

    // Count well-separated local maxima of the smoothed counts.
    int maxima = 0;
    int last_max = -10;
    for (int i = 1; i + 1 < static_cast<int>(s.size()); ++i)
        if (s[static_cast<std::size_t>(i)] > s[static_cast<std::size_t>(i - 1)] &&
            s[static_cast<std::size_t>(i)] >= s[static_cast<std::size_t>(i + 1)] &&
            s[static_cast<std::size_t>(i)] > 5.0 && i - last_max > 8) {
            ++maxima;
            last_max = i;
        }
    CHECK(maxima >= 3);

    // And the cutoff finder lands between the background and tissue means.
    const double cutoff = find_background_cutoff(h, params);
    CHECK(cutoff > 20.0);
    CHECK(cutoff < 80.0);
}

TEST_CASE("intensity bands must be ordered") {
    PhantomSpec s = desk_spec(13);
    s.tissue.mean = 10.0;  // below background
    CHECK_THROWS_AS(generate_phantom(s), std::invalid_argument);
}

TEST_CASE("capsule rasterization matches the serial reference bit-exactly") {
    Rng rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a({24, 24, 24}), b({24, 24, 24});
        const Vec3 p0{rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(0, 8)};
        const Vec3 p1{rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(0, 8)};
        const double r = rng.uniform(0.3, 2.0);
        rasterize_capsule(a, p0, p1, r, 0.35);
        serial::rasterize_capsule(b, p0, p1, r, 0.35);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("capsule rasterization is an exact distance test") {
    Tensor m({16, 16, 16});
    const Vec3 p0{2.0, 4.0, 4.0}, p1{12.0, 4.0, 4.0};
    const double r = 1.5, sp = 1.0;
    rasterize_capsule(m, p0, p1, r, sp);
    for (int d = 0; d < 16; ++d)
        for (int h = 0; h < 16; ++h)
            for (int w = 0; w < 16; ++w) {
                // Distance from the voxel position to the segment.
                const double x = d * sp, y = h * sp, z = w * sp;
                const double t = std::clamp((x - p0[0]) / (p1[0] - p0[0]), 0.0, 1.0);
                const double cx = p0[0] + t * (p1[0] - p0[0]);
                const double dist =
                    std::sqrt((x - cx) * (x - cx) + (y - 4.0) * (y - 4.0) + (z - 4.0) * (z - 4.0));
                CHECK(m.at(d, h, w) == (dist <= r ? 1.0 : 0.0));
            }
}

TEST_CASE("phantom suite writes a loadable manifest with full masks") {
    const fs::path dir = fs::temp_directory_path() / "vseg_phantom_suite";
    fs::remove_all(dir);

    PhantomSpec base = desk_spec();
    base.grid_size = 32;
    base.tree_depth = 2;
    DatasetManifest m = phantom_suite(4, base, 42, dir.string());
    CHECK(m.cases.size() == 4);
    m.validate(/*check_files=*/true);

    std::set<std::string> patients;
    for (const auto& c : m.cases) {
        patients.insert(c.patient);
        REQUIRE(c.full_mask_path.has_value());
        LabelMask partial = load_mask(c.mask_path);
        LabelMask full = load_mask(*c.full_mask_path);
        CHECK(partial.foreground_count() > 0);
        // Subset voxelwise.
        for (std::size_t i = 0; i < full.data.size(); ++i)
            if (partial.data[i] != 0.0) CHECK(full.data[i] != 0.0);
    }
    CHECK(patients.size() == 4);

    // Mean fine-vessel fraction across the suite is positive.
    double fine = 0.0;
    for (const auto& c : m.cases) {
        LabelMask partial = load_mask(c.mask_path);
        LabelMask full = load_mask(*c.full_mask_path);
        fine += static_cast<double>(full.foreground_count() - partial.foreground_count());
    }
    CHECK(fine > 0.0);

    // Regeneration is bit-identical.
    const fs::path dir2 = fs::temp_directory_path() / "vseg_phantom_suite2";
    fs::remove_all(dir2);
    DatasetManifest m2 = phantom_suite(4, base, 42, dir2.string());
    for (std::size_t i = 0; i < m.cases.size(); ++i) {
        Volume a = load_volume(m.cases[i].volume_path);
        Volume b = load_volume(m2.cases[i].volume_path);
        for (std::size_t j = 0; j < a.data.size(); ++j) REQUIRE(a.data[j] == b.data[j]);
    }
}
