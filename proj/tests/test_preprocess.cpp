#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>

#include "vesselseg/histogram.hpp"
#include "vesselseg/preprocess.hpp"
#include "vesselseg/rng.hpp"

using namespace vseg;

namespace {

Volume constant_volume(int n, double value, double sp = 1.0) {
    return Volume(Tensor({n, n, n}, value), {sp, sp, sp});
}

Volume random_volume(int n, Rng& rng, double lo = 0.0, double hi = 100.0) {
    Tensor t({n, n, n});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return Volume(t, {1.0, 1.0, 1.0});
}

// Trimodal fixture: background/tissue/vessel voxel populations drawn around
// three separated means.
Volume trimodal_volume(int n, Rng& rng, double bg_frac = 0.55, double vessel_frac = 0.03) {
    Tensor t({n, n, n});
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double u = rng.uniform();
        double mu = u < bg_frac ? 20.0 : (u < 1.0 - vessel_frac ? 80.0 : 160.0);
        t[i] = rng.normal(mu, 6.0);
    }
    return Volume(t, {1.0, 1.0, 1.0});
}

// 6-connected component count, used by the resampling topology check.
int connected_components(const Tensor& mask) {
    const int D = mask.extent(0), H = mask.extent(1), W = mask.extent(2);
    std::vector<char> seen(mask.size(), 0);
    auto idx = [&](int d, int h, int w) {
        return (static_cast<std::size_t>(d) * H + h) * W + w;
    };
    int comps = 0;
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                if (mask.at(d, h, w) == 0.0 || seen[idx(d, h, w)]) continue;
                ++comps;
                std::queue<std::array<int, 3>> q;
                q.push({d, h, w});
                seen[idx(d, h, w)] = 1;
                while (!q.empty()) {
                    auto [cd, ch, cw] = q.front();
                    q.pop();
                    const int deltas[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                              {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
                    for (const auto& dl : deltas) {
                        const int nd = cd + dl[0], nh = ch + dl[1], nw = cw + dl[2];
                        if (nd < 0 || nh < 0 || nw < 0 || nd >= D || nh >= H || nw >= W) continue;
                        if (mask.at(nd, nh, nw) == 0.0 || seen[idx(nd, nh, nw)]) continue;
                        seen[idx(nd, nh, nw)] = 1;
                        q.push({nd, nh, nw});
                    }
                }
            }
    return comps;
}

}  // namespace

// ---- resample_to_spacing -------------------------------------------------------

TEST_CASE("resample doubles the grid when halving the spacing") {
    Rng rng(3);
    Volume v = random_volume(64, rng);
    v.spacing = {0.70, 0.70, 0.70};
    auto [out, _] = resample_to_spacing(v, std::nullopt, {0.35, 0.35, 0.35});
    CHECK(out.data.shape() == std::vector<int>{128, 128, 128});
    CHECK(out.spacing[0] == 0.35);
}

TEST_CASE("resample at identical spacing is the identity") {
    Rng rng(4);
    Volume v = random_volume(16, rng);
    v.spacing = {0.35, 0.35, 0.35};
    auto [out, _] = resample_to_spacing(v, std::nullopt, {0.35, 0.35, 0.35});
    REQUIRE(out.data.shape() == v.data.shape());
    for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(out.data[i] == v.data[i]);
}

TEST_CASE("resampling a constant volume stays constant") {
    Volume v = constant_volume(16, 7.25, 1.0);
    auto [out, _] = resample_to_spacing(v, std::nullopt, {0.6, 0.6, 0.6});
    for (std::size_t i = 0; i < out.data.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(7.25).epsilon(1e-12));
}

TEST_CASE("resample rejects outputs below 4 voxels") {
    Volume v = constant_volume(8, 1.0, 1.0);
    CHECK_THROWS_AS(resample_to_spacing(v, std::nullopt, {4.0, 4.0, 4.0}), std::runtime_error);
}

TEST_CASE("mask resampling keeps binarity (nearest) and matches shape") {
    Rng rng(5);
    Volume v = random_volume(20, rng);
    Tensor m({20, 20, 20});
    for (int d = 8; d < 12; ++d)
        for (int h = 8; h < 12; ++h)
            for (int w = 0; w < 20; ++w) m.at(d, h, w) = 1.0;
    LabelMask mask(m, v.spacing);
    auto [out, rmask] = resample_to_spacing(v, mask, {0.5, 0.5, 0.5});
    REQUIRE(rmask.has_value());
    CHECK(rmask->data.same_shape(out.data));
    for (std::size_t i = 0; i < rmask->data.size(); ++i) {
        const bool binary = rmask->data[i] == 0.0 || rmask->data[i] == 1.0;
        CHECK(binary);
    }
}

TEST_CASE("upsampling a tubular mask preserves the trunk component count") {
    // Single straight tube through the volume.
    Tensor m({16, 16, 16});
    for (int d = 0; d < 16; ++d)
        for (int h = 7; h <= 8; ++h)
            for (int w = 7; w <= 8; ++w) m.at(d, h, w) = 1.0;
    LabelMask mask(m, {1.0, 1.0, 1.0});
    Volume v = constant_volume(16, 0.0, 1.0);
    REQUIRE(connected_components(mask.data) == 1);

    auto [_, rmask] = resample_to_spacing(v, mask, {0.5, 0.5, 0.5});
    CHECK(connected_components(rmask->data) == 1);
}

TEST_CASE("parallel trilinear kernel matches the serial reference bit-exactly") {
    Rng rng(6);
    Tensor src({13, 17, 11});
    for (std::size_t i = 0; i < src.size(); ++i) src[i] = rng.normal();
    const Index3 out_shape{19, 23, 14};
    const Vec3 scale{13.0 / 19.0, 17.0 / 23.0, 11.0 / 14.0};
    Tensor a = resample_trilinear(src, out_shape, scale);
    Tensor b = serial::resample_trilinear(src, out_shape, scale);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

// ---- compute_histogram -------------------------------------------------------------

TEST_CASE("two-value volume splits counts across two bins") {
    Tensor t({2, 2, 2});
    t[0] = t[1] = t[2] = t[3] = 0.0;
    t[4] = t[5] = t[6] = t[7] = 10.0;
    Histogram h = compute_histogram(Volume(t, {1, 1, 1}), 2);
    CHECK(h.counts[0] == 4);
    CHECK(h.counts[1] == 4);
}

TEST_CASE("histogram counts sum to the voxel count") {
    Rng rng(7);
    Volume v = random_volume(12, rng);
    Histogram h = compute_histogram(v, 32);
    std::int64_t total = 0;
    for (auto c : h.counts) total += c;
    CHECK(total == static_cast<std::int64_t>(v.data.size()));
}

TEST_CASE("histogram matches brute-force binning on uniform random data") {
    Rng rng(8);
    Volume v = random_volume(10, rng, -3.0, 5.0);
    const int bins = 256;
    Histogram h = compute_histogram(v, bins);

    // Brute-force oracle over the same uniform edges.
    std::vector<std::int64_t> expected(bins, 0);
    const double lo = v.data.min(), hi = v.data.max();
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        int b = static_cast<int>((v.data[i] - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++expected[static_cast<std::size_t>(b)];
    }
    CHECK(h.counts == expected);
}

TEST_CASE("constant volume yields a degenerate single-bin histogram") {
    Histogram h = compute_histogram(constant_volume(4, 5.0), 16);
    CHECK(h.degenerate);
    CHECK(h.counts.size() == 1);
    CHECK(h.counts[0] == 64);
}

// ---- find_background_cutoff -----------------------------------------------------------

namespace {

Histogram analytic_histogram(const std::vector<std::int64_t>& counts, double lo, double hi) {
    Histogram h;
    h.counts = counts;
    const int n = static_cast<int>(counts.size());
    h.bin_edges.resize(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i)
        h.bin_edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / n;
    return h;
}

// Exhaustive oracle: smallest smoothed count strictly between the two modes.
int exhaustive_valley(const std::vector<double>& smoothed, int from, int to) {
    int best = from;
    for (int i = from; i <= to; ++i)
        if (smoothed[static_cast<std::size_t>(i)] < smoothed[static_cast<std::size_t>(best)])
            best = i;
    return best;
}

}  // namespace

TEST_CASE("trimodal analytic histogram: cutoff lands at the valley near 30") {
    // Modes at intensities 10 (tallest), 50, 90 over range [0, 100]; valley
    // near intensity 30.
    std::vector<std::int64_t> counts(100, 0);
    auto bump = [&](int center, int width, std::int64_t peak) {
        for (int i = std::max(0, center - 3 * width); i <= std::min(99, center + 3 * width); ++i) {
            const double x = static_cast<double>(i - center) / width;
            counts[static_cast<std::size_t>(i)] +=
                static_cast<std::int64_t>(peak * std::exp(-0.5 * x * x));
        }
    };
    bump(10, 5, 10000);
    bump(50, 7, 4000);
    bump(90, 4, 1500);
    Histogram h = analytic_histogram(counts, 0.0, 100.0);

    AhaParams params;
    const double cutoff = find_background_cutoff(h, params);

    auto smoothed = smooth_counts(h, params.smoothing_window);
    const int oracle_bin = exhaustive_valley(smoothed, 10, 50);
    CHECK(std::abs(cutoff - h.left_edge(oracle_bin)) <= h.bin_width());
    CHECK(cutoff > 20.0);
    CHECK(cutoff < 45.0);
}

TEST_CASE("monotone-decreasing histogram falls back to steepest descent") {
    std::vector<std::int64_t> counts(64);
    for (int i = 0; i < 64; ++i)
        counts[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(100000.0 / (1.0 + i * i));
    Histogram h = analytic_histogram(counts, 0.0, 64.0);
    AhaParams params;
    const double cutoff = find_background_cutoff(h, params);

    // Oracle: exhaustive first-difference scan over the smoothed counts.
    auto s = smooth_counts(h, params.smoothing_window);
    int best = 1;
    for (int i = 2; i < 64; ++i)
        if (s[static_cast<std::size_t>(i)] - s[static_cast<std::size_t>(i - 1)] <
            s[static_cast<std::size_t>(best)] - s[static_cast<std::size_t>(best - 1)])
            best = i;
    CHECK(cutoff == doctest::Approx(h.left_edge(best)));
}

TEST_CASE("histogram dominated by upper-range mass returns the minimum intensity") {
    std::vector<std::int64_t> counts(64, 10);
    counts[50] = 100000;  // global max far above the search region
    Histogram h = analytic_histogram(counts, 0.0, 64.0);
    AhaParams params;
    CHECK(find_background_cutoff(h, params) == 0.0);
}

// ---- adaptive_histogram_attention ---------------------------------------------------------

TEST_CASE("aha applies the affine map: cutoff -> 0, max -> 1, midpoint -> 0.5") {
    Rng rng(9);
    Volume v = trimodal_volume(24, rng);
    AhaParams params;

    // The midpoint probe lands in the heavy tissue flank, so planting it does
    // not move the valley; verify the cutoff is unchanged before relying on it.
    const double mx = v.data.max();
    const double c0 = find_background_cutoff(compute_histogram(v, params.bins), params);
    v.data[0] = (c0 + mx) / 2.0;
    const double cutoff = find_background_cutoff(compute_histogram(v, params.bins), params);
    REQUIRE(cutoff == c0);

    Volume out = adaptive_histogram_attention(v, params);

    // Elementwise affine semantics against the independently recomputed cutoff.
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double expected = std::clamp((v.data[i] - cutoff) / (mx - cutoff), 0.0, 1.0);
        CHECK(out.data[i] == doctest::Approx(expected).epsilon(1e-12));
    }
    // Spec'd endpoint values: below-cutoff voxels clamp to exactly 0, the
    // maximum maps to exactly 1, the planted midpoint to 0.5.
    CHECK(out.data[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(out.data.max() == doctest::Approx(1.0));
    CHECK(out.data.min() == 0.0);
}

TEST_CASE("aha clamps at least the sub-cutoff fraction to zero") {
    Rng rng(10);
    Volume v = trimodal_volume(20, rng);
    AhaParams params;
    Histogram h = compute_histogram(v, params.bins);
    const double cutoff = find_background_cutoff(h, params);

    std::size_t below = 0;
    for (std::size_t i = 0; i < v.data.size(); ++i)
        if (v.data[i] < cutoff) ++below;
    REQUIRE(below > 0);

    Volume out = adaptive_histogram_attention(v, params);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (out.data[i] == 0.0) ++zeros;
    CHECK(zeros >= below);
}

TEST_CASE("aha output range is [0,1] and is idempotent when the cutoff is zero") {
    // Tissue-dominant fixture: the histogram's global maximum sits mid-range,
    // so the cutoff degenerates to the minimum and AHA reduces to min-max
    // normalization, which is idempotent.
    Rng rng(11);
    Tensor t({16, 16, 16});
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double u = rng.uniform();
        t[i] = rng.normal(u < 0.15 ? 20.0 : 80.0, 5.0);  // tissue dominates
    }
    Volume v(t, {1, 1, 1});
    AhaParams params;

    Volume once = adaptive_histogram_attention(v, params);
    CHECK(once.data.min() >= 0.0);
    CHECK(once.data.max() <= 1.0);

    // Precondition of the property: the cutoff of the normalized volume is 0.
    Histogram h = compute_histogram(once, params.bins);
    REQUIRE(find_background_cutoff(h, params) == doctest::Approx(0.0));

    Volume twice = adaptive_histogram_attention(once, params);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < once.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(twice.data[i] - once.data[i]));
    CHECK(max_diff < 1e-6);
}

TEST_CASE("aha is invariant to positive affine rescaling up to bin quantization") {
    Rng rng(12);
    Volume v = trimodal_volume(20, rng);
    AhaParams params;
    Volume base = adaptive_histogram_attention(v, params);

    Volume scaled = v;
    for (std::size_t i = 0; i < scaled.data.size(); ++i)
        scaled.data[i] = 3.5 * scaled.data[i] - 40.0;
    Volume out = adaptive_histogram_attention(scaled, params);

    // Affine rescaling maps the uniform bin grid onto itself, so outputs agree
    // up to floating-point noise, well inside the 2-bin-width allowance.
    const double two_bins_normalized = 2.0 / params.bins;
    double max_diff = 0.0;
    for (std::size_t i = 0; i < base.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(out.data[i] - base.data[i]));
    CHECK(max_diff <= two_bins_normalized);
}

TEST_CASE("aha on constant volume returns zeros") {
    Volume out = adaptive_histogram_attention(constant_volume(8, 3.0), AhaParams{});
    CHECK(out.data.max() == 0.0);
}

// ---- extract_patches -------------------------------------------------------------------

namespace {

struct PatchFixture {
    Volume vol;
    Volume vessel_like;
    LabelMask mask;
};

PatchFixture patch_fixture(int n, Rng& rng) {
    PatchFixture f;
    f.vol = random_volume(n, rng);
    f.vessel_like = f.vol;
    for (std::size_t i = 0; i < f.vessel_like.data.size(); ++i)
        f.vessel_like.data[i] = std::clamp(f.vessel_like.data[i] / 100.0, 0.0, 1.0);
    Tensor m({n, n, n});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
    f.mask = LabelMask(m, f.vol.spacing);
    return f;
}

}  // namespace

TEST_CASE("full-extent 64^3 with patch 32 stride 32 gives 8 labeled, 0 unlabeled") {
    Rng rng(13);
    PatchFixture f = patch_fixture(64, rng);
    AnnotationExtent extent{{0, 0, 0}, {64, 64, 64}};
    PatchStreams s = extract_patches(f.vol, f.vessel_like, f.mask, extent, 32, 32);
    CHECK(s.labeled.size() == 8);
    CHECK(s.unlabeled.size() == 0);
    for (const auto& p : s.labeled) {
        CHECK(p.mask.has_value());
        CHECK(p.group == PatchGroup::labeled);
    }
}

TEST_CASE("patch 32 stride 16 on 64^3 visits 27 grid positions") {
    CHECK(patch_grid({64, 64, 64}, 32, 16).size() == 27);
}

TEST_CASE("corner extent: labeled empty, unlabeled patches disjoint from the box") {
    Rng rng(14);
    PatchFixture f = patch_fixture(64, rng);
    AnnotationExtent extent{{0, 0, 0}, {8, 8, 8}};
    PatchStreams s = extract_patches(f.vol, f.vessel_like, f.mask, extent, 32, 16);
    CHECK(s.labeled.empty());

    // Brute-force box-intersection oracle.
    std::size_t expected_unlabeled = 0;
    for (const auto& org : patch_grid({64, 64, 64}, 32, 16)) {
        const bool disjoint = org[0] >= 8 || org[1] >= 8 || org[2] >= 8;
        if (disjoint) ++expected_unlabeled;
    }
    CHECK(s.unlabeled.size() == expected_unlabeled);
    for (const auto& p : s.unlabeled) CHECK_FALSE(p.mask.has_value());
}

TEST_CASE("patch grouping respects extent containment and disjointness on random extents") {
    Rng rng(15);
    PatchFixture f = patch_fixture(48, rng);
    for (int trial = 0; trial < 20; ++trial) {
        Index3 lo, hi;
        for (int a = 0; a < 3; ++a) {
            lo[a] = static_cast<int>(rng.uniform_int(0, 30));
            hi[a] = static_cast<int>(rng.uniform_int(lo[a] + 4, 48));
        }
        AnnotationExtent extent{lo, hi};
        PatchStreams s = extract_patches(f.vol, f.vessel_like, f.mask, extent, 16, 8);

        std::size_t in_count = 0, out_count = 0, straddle = 0;
        for (const auto& org : patch_grid({48, 48, 48}, 16, 8)) {
            bool inside = true, outside = false;
            for (int a = 0; a < 3; ++a) {
                if (org[a] < lo[a] || org[a] + 16 > hi[a]) inside = false;
                if (org[a] + 16 <= lo[a] || org[a] >= hi[a]) outside = true;
            }
            if (inside) ++in_count;
            else if (outside) ++out_count;
            else ++straddle;
        }
        CHECK(s.labeled.size() == in_count);
        CHECK(s.unlabeled.size() == out_count);
        CHECK(s.labeled.size() + s.unlabeled.size() + straddle ==
              patch_grid({48, 48, 48}, 16, 8).size());

        for (const auto& p : s.labeled) CHECK(extent.contains_box(p.grid_origin, 16));
        for (const auto& p : s.unlabeled) CHECK(extent.disjoint_box(p.grid_origin, 16));
    }
}

TEST_CASE("stride above patch size is rejected") {
    Rng rng(16);
    PatchFixture f = patch_fixture(32, rng);
    AnnotationExtent extent{{0, 0, 0}, {32, 32, 32}};
    CHECK_THROWS_AS(extract_patches(f.vol, f.vessel_like, f.mask, extent, 16, 17),
                    std::invalid_argument);
}

TEST_CASE("labeled patch carries matching crops") {
    Rng rng(17);
    PatchFixture f = patch_fixture(32, rng);
    AnnotationExtent extent{{0, 0, 0}, {32, 32, 32}};
    PatchStreams s = extract_patches(f.vol, f.vessel_like, f.mask, extent, 16, 16);
    REQUIRE(!s.labeled.empty());
    const Patch& p = s.labeled.front();
    const Index3 o = p.grid_origin;
    for (int d = 0; d < 16; d += 5)
        for (int h = 0; h < 16; h += 5)
            for (int w = 0; w < 16; w += 5) {
                CHECK(p.image.at(d, h, w) == f.vol.data.at(o[0] + d, o[1] + h, o[2] + w));
                CHECK(p.vessel_like.at(d, h, w) ==
                      f.vessel_like.data.at(o[0] + d, o[1] + h, o[2] + w));
                CHECK((*p.mask).at(d, h, w) == f.mask.data.at(o[0] + d, o[1] + h, o[2] + w));
            }
}
