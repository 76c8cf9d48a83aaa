#include "vesselseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vesselseg/log.hpp"
#include "vesselseg/mesh.hpp"
#include "vesselseg/surface_distance.hpp"

namespace vseg {

ConfusionCounts confusion(const LabelMask& pred, const LabelMask& gt,
                          const AnnotationExtent& roi) {
    if (!pred.data.same_shape(gt.data))
        throw std::invalid_argument("confusion: mask shapes must match");
    for (int a = 0; a < 3; ++a)
        if (roi.bbox_min[a] < 0 || roi.bbox_max[a] > pred.dim(a) ||
            roi.bbox_min[a] >= roi.bbox_max[a])
            throw std::invalid_argument("confusion: roi outside mask bounds");

    ConfusionCounts c;
    for (int d = roi.bbox_min[0]; d < roi.bbox_max[0]; ++d)
        for (int h = roi.bbox_min[1]; h < roi.bbox_max[1]; ++h)
            for (int w = roi.bbox_min[2]; w < roi.bbox_max[2]; ++w) {
                const bool p = pred.data.at(d, h, w) != 0.0;
                const bool g = gt.data.at(d, h, w) != 0.0;
                c.tp += p && g;
                c.fp += p && !g;
                c.fn += !p && g;
                c.tn += !p && !g;
            }
    return c;
}

namespace {

double ratio_or_one(double num, double den, const char* name) {
    if (den == 0.0) {
        warn(std::string("pixel_metrics: 0/0 in ") + name + ", reporting 1 by convention");
        return 1.0;
    }
    return num / den;
}

}  // namespace

PixelMetrics pixel_metrics(const ConfusionCounts& c) {
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
    PixelMetrics m;
    m.sensitivity = ratio_or_one(tp, tp + fn, "sensitivity");
    m.precision = ratio_or_one(tp, tp + fp, "precision");
    m.specificity = ratio_or_one(tn, tn + fp, "specificity");
    m.dsc = ratio_or_one(2.0 * tp, 2.0 * tp + fp + fn, "dsc");
    m.jaccard = ratio_or_one(tp, tp + fp + fn, "jaccard");
    if (2.0 * tp + fp + fn == 0.0) {
        warn("pixel_metrics: 0/0 in volume_similarity, reporting 1 by convention");
        m.volume_similarity = 1.0;
    } else {
        m.volume_similarity = 1.0 - std::abs(fp - fn) / (2.0 * tp + fp + fn);
    }
    return m;
}

PairedTestResult paired_test(const std::vector<double>& errors_a,
                             const std::vector<double>& errors_b) {
    if (errors_a.size() != errors_b.size())
        throw std::invalid_argument("paired_test: lists must have equal length");
    if (errors_a.size() < 5) throw std::invalid_argument("paired_test: need at least 5 pairs");

    std::vector<double> diffs;
    for (std::size_t i = 0; i < errors_a.size(); ++i) {
        const double d = errors_b[i] - errors_a[i];
        if (d != 0.0) diffs.push_back(d);
    }
    if (diffs.empty()) return {1.0, true};

    const std::size_t n = diffs.size();
    // Average ranks of |d|; doubling makes tied (x.5) ranks integral.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t l, std::size_t r) { return std::abs(diffs[l]) < std::abs(diffs[r]); });
    std::vector<int> rank2(n, 0);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(diffs[idx[j + 1]]) == std::abs(diffs[idx[i]])) ++j;
        const int avg2 = static_cast<int>(i + 1 + j + 1);  // 2 * average rank
        for (std::size_t k = i; k <= j; ++k) rank2[idx[k]] = avg2;
        i = j + 1;
    }

    std::int64_t w2_obs = 0;  // 2 * W+ statistic
    std::int64_t w2_total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        w2_total += rank2[i];
        if (diffs[i] > 0.0) w2_obs += rank2[i];
    }

    if (n <= 25) {
        // Exact null distribution of 2*W+ by dynamic programming; counts fit a
        // double exactly (2^25 < 2^53).
        std::vector<double> ways(static_cast<std::size_t>(w2_total) + 1, 0.0);
        ways[0] = 1.0;
        std::int64_t reach = 0;
        for (std::size_t i = 0; i < n; ++i) {
            reach += rank2[i];
            for (std::int64_t s = reach; s >= rank2[i]; --s)
                ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - rank2[i])];
        }
        const double total = std::pow(2.0, static_cast<double>(n));
        double le = 0.0, ge = 0.0;
        for (std::int64_t s = 0; s <= w2_total; ++s) {
            if (s <= w2_obs) le += ways[static_cast<std::size_t>(s)];
            if (s >= w2_obs) ge += ways[static_cast<std::size_t>(s)];
        }
        const double p = 2.0 * std::min(le, ge) / total;
        return {std::min(1.0, p), false};
    }

    // Normal approximation with continuity correction for larger samples.
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    const double w_plus = static_cast<double>(w2_obs) / 2.0;
    const double z = (w_plus - mean - (w_plus > mean ? 0.5 : -0.5)) / std::sqrt(var);
    const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
    return {std::min(1.0, p), false};
}

CaseReport evaluate_case(const LabelMask& pred, const LabelMask& gt, const AnnotationExtent& roi,
                         const Vec3& spacing) {
    CaseReport report;
    report.pixel = pixel_metrics(confusion(pred, gt, roi));

    LabelMask pred_roi = crop(pred, roi);
    LabelMask gt_roi = crop(gt, roi);
    pred_roi.spacing = spacing;
    gt_roi.spacing = spacing;

    const bool gt_empty = gt_roi.foreground_count() == 0;
    const bool pred_empty = pred_roi.foreground_count() == 0;
    if (gt_empty) {
        if (!pred_empty)
            warn("evaluate_case: empty ground truth inside roi, surface error reported as 0");
        report.surface_error_mm = 0.0;
    } else if (pred_empty) {
        const Index3 sz = roi.sizes();
        double diag = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double e = sz[static_cast<std::size_t>(a)] * spacing[static_cast<std::size_t>(a)];
            diag += e * e;
        }
        report.surface_error_mm = std::sqrt(diag);
        warn("evaluate_case: empty prediction inside roi, surface error set to the roi diagonal");
    } else {
        report.surface_error_mm = surface_error(extract_surface(gt_roi), extract_surface(pred_roi));
    }
    return report;
}

AggregateStats aggregate(const std::vector<double>& values) {
    AggregateStats s;
    s.n = values.size();
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(values.size()));
    return s;
}

}  // namespace vseg
