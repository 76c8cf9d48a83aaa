#include "vesselseg/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vesselseg/log.hpp"

namespace vseg {

void AhaParams::validate() const {
    if (bins < 16) throw std::invalid_argument("aha bins must be >= 16");
    if (smoothing_window < 1 || smoothing_window % 2 == 0)
        throw std::invalid_argument("aha smoothing window must be odd and >= 1");
    if (!(background_search_fraction > 0.0) || background_search_fraction > 1.0)
        throw std::invalid_argument("background search fraction must be in (0, 1]");
}

Histogram compute_histogram(const Volume& vol, int bins) {
    if (bins < 2) throw std::invalid_argument("histogram needs at least 2 bins");
    const Tensor& d = vol.data;
    if (d.empty()) throw std::invalid_argument("histogram of empty volume");

    const double lo = d.min(), hi = d.max();
    Histogram h;
    if (lo == hi) {
        // Constant volume: single artificial bin, flagged.
        h.bin_edges = {lo, lo + 1.0};
        h.counts = {static_cast<std::int64_t>(d.size())};
        h.degenerate = true;
        return h;
    }

    h.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
    const double width = (hi - lo) / bins;
    for (int b = 0; b <= bins; ++b) h.bin_edges[static_cast<std::size_t>(b)] = lo + width * b;
    h.bin_edges.back() = hi;  // guard against rounding drift

    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double inv = bins / (hi - lo);
    for (std::size_t i = 0; i < d.size(); ++i) {
        int b = static_cast<int>((d[i] - lo) * inv);
        b = std::clamp(b, 0, bins - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

std::vector<double> smooth_counts(const Histogram& hist, int window) {
    const int n = hist.bins();
    const int half = window / 2;
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        int cnt = 0;
        for (int j = std::max(0, i - half); j <= std::min(n - 1, i + half); ++j) {
            acc += static_cast<double>(hist.counts[static_cast<std::size_t>(j)]);
            ++cnt;
        }
        out[static_cast<std::size_t>(i)] = acc / cnt;
    }
    return out;
}

double find_background_cutoff(const Histogram& hist, const AhaParams& params) {
    params.validate();
    if (hist.degenerate) throw std::invalid_argument("cutoff search on degenerate histogram");

    const std::vector<double> s = smooth_counts(hist, params.smoothing_window);
    const int n = hist.bins();
    const double min_intensity = hist.bin_edges.front();
    const double range = hist.bin_edges.back() - min_intensity;

    int peak = 0;
    for (int i = 1; i < n; ++i)
        if (s[static_cast<std::size_t>(i)] > s[static_cast<std::size_t>(peak)]) peak = i;

    // The peak only counts as background when it sits in the low-intensity
    // search region; a histogram dominated by tissue/vessel mass is left alone.
    const double search_hi = min_intensity + params.background_search_fraction * range;
    if (hist.center(peak) > search_hi) return min_intensity;

    // First local minimum after the peak.
    for (int i = peak + 1; i + 1 < n; ++i) {
        const double c = s[static_cast<std::size_t>(i)];
        if (c <= s[static_cast<std::size_t>(i - 1)] && c <= s[static_cast<std::size_t>(i + 1)] &&
            (c < s[static_cast<std::size_t>(i - 1)] || c < s[static_cast<std::size_t>(i + 1)]))
            return hist.left_edge(i);
    }

    // Monotone tail: fall back to the steepest descent after the peak.
    int best = -1;
    double steepest = 0.0;
    for (int i = peak + 1; i < n; ++i) {
        const double diff = s[static_cast<std::size_t>(i)] - s[static_cast<std::size_t>(i - 1)];
        if (best < 0 || diff < steepest) {
            steepest = diff;
            best = i;
        }
    }
    return best < 0 ? min_intensity : hist.left_edge(best);
}

Volume adaptive_histogram_attention(const Volume& vol, const AhaParams& params) {
    params.validate();
    Histogram h = compute_histogram(vol, params.bins);

    Tensor out(vol.data.shape());
    if (h.degenerate) {
        warn("adaptive_histogram_attention: constant volume, output is all zeros");
        return Volume(std::move(out), vol.spacing, vol.origin);
    }

    const double cutoff = find_background_cutoff(h, params);
    const double hi = vol.data.max();
    if (!(hi > cutoff)) {
        warn("adaptive_histogram_attention: cutoff equals maximum, output is all zeros");
        return Volume(std::move(out), vol.spacing, vol.origin);
    }

    const double inv = 1.0 / (hi - cutoff);
    const double* src = vol.data.data();
    double* dst = out.data();
    const std::int64_t n = static_cast<std::int64_t>(vol.data.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double v = (src[i] - cutoff) * inv;
        dst[i] = std::clamp(v, 0.0, 1.0);
    }
    return Volume(std::move(out), vol.spacing, vol.origin);
}

}  // namespace vseg
