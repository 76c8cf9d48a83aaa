#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vesselseg/volume.hpp"

namespace vseg {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::int64_t total() const { return tp + fp + tn + fn; }
};

/// Confusion counts restricted to the voxels inside the ROI box.
ConfusionCounts confusion(const LabelMask& pred, const LabelMask& gt, const AnnotationExtent& roi);

struct PixelMetrics {
    double sensitivity = 1.0;
    double precision = 1.0;
    double specificity = 1.0;
    double dsc = 1.0;
    double jaccard = 1.0;
    double volume_similarity = 1.0;
};

/// Rates from the counts. Any 0/0 is defined as 1 (perfect-empty convention)
/// and logged.
PixelMetrics pixel_metrics(const ConfusionCounts& c);

/// Two-sided Wilcoxon signed-rank test on paired per-case values. Exact
/// distribution (dynamic program over average ranks) for n <= 25 pairs after
/// zero-difference removal; normal approximation beyond. All-zero differences
/// give p = 1 with the degenerate flag set.
struct PairedTestResult {
    double p_value = 1.0;
    bool degenerate = false;
};

PairedTestResult paired_test(const std::vector<double>& errors_a,
                             const std::vector<double>& errors_b);

struct CaseReport {
    std::string case_id;
    PixelMetrics pixel;
    double surface_error_mm = 0.0;
    // Present when the manifest carries the complete ground truth: recall on
    // the withheld fine-vessel voxels (full minus partial) and the surface
    // error against the full mask.
    std::optional<double> fine_vessel_sensitivity;
    std::optional<double> full_surface_error_mm;
};

/// Pixel metrics inside the ROI plus the surface error between meshes
/// extracted from the ROI-cropped masks. When the prediction crop is empty
/// while the ground truth is not, the surface error degenerates to the ROI
/// diagonal (finite, monotone-bad) and a warning is emitted.
CaseReport evaluate_case(const LabelMask& pred, const LabelMask& gt, const AnnotationExtent& roi,
                         const Vec3& spacing);

struct AggregateStats {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
    std::size_t n = 0;
};

AggregateStats aggregate(const std::vector<double>& values);

}  // namespace vseg
