#pragma once

#include <vector>

#include "vesselseg/volume.hpp"

namespace vseg {

struct Histogram {
    std::vector<double> bin_edges;  // strictly increasing, size bins+1
    std::vector<std::int64_t> counts;
    bool degenerate = false;  // constant-intensity volume

    int bins() const { return static_cast<int>(counts.size()); }
    double bin_width() const { return bin_edges[1] - bin_edges[0]; }
    double left_edge(int b) const { return bin_edges[static_cast<std::size_t>(b)]; }
    double center(int b) const {
        return 0.5 * (bin_edges[static_cast<std::size_t>(b)] + bin_edges[static_cast<std::size_t>(b) + 1]);
    }
};

struct AhaParams {
    int bins = 256;
    int smoothing_window = 5;               // centered moving average, odd
    double background_search_fraction = 1.0 / 3.0;

    void validate() const;
};

/// Uniform-bin histogram spanning [min, max] of the intensities.
/// A constant volume yields a single-bin histogram flagged degenerate.
Histogram compute_histogram(const Volume& vol, int bins);

/// Intensity separating the background mode from the rest of the histogram.
///
/// The smoothed counts are scanned for the first local minimum after the
/// background peak; the peak is the global maximum bin, and only qualifies
/// when it lies in the lowest `background_search_fraction` of the intensity
/// range. Without a local minimum the bin of steepest descent after the peak
/// is used. When no bin qualifies as background the cutoff degenerates to the
/// minimum intensity (a no-op for the subsequent normalization). The returned
/// value is the left edge of the selected bin.
double find_background_cutoff(const Histogram& hist, const AhaParams& params);

/// Background-suppressing intensity normalization: values below the detected
/// cutoff c are clamped to c, then [c, max] is mapped affinely onto [0, 1].
Volume adaptive_histogram_attention(const Volume& vol, const AhaParams& params);

/// Smoothed counts as used by the cutoff search (exposed for diagnostics).
std::vector<double> smooth_counts(const Histogram& hist, int window);

}  // namespace vseg
