#include "vesselseg/volume.hpp"

#include <limits>
#include <stdexcept>

namespace vseg {

AnnotationExtent mask_bounding_box(const LabelMask& mask) {
    const Tensor& m = mask.data;
    const int D = m.extent(0), H = m.extent(1), W = m.extent(2);
    Index3 lo{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(),
              std::numeric_limits<int>::max()};
    Index3 hi{-1, -1, -1};
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                if (m.at(d, h, w) != 0.0) {
                    lo[0] = std::min(lo[0], d);
                    lo[1] = std::min(lo[1], h);
                    lo[2] = std::min(lo[2], w);
                    hi[0] = std::max(hi[0], d);
                    hi[1] = std::max(hi[1], h);
                    hi[2] = std::max(hi[2], w);
                }
    if (hi[0] < 0) throw std::runtime_error("mask_bounding_box: no annotated voxels");
    return AnnotationExtent{lo, {hi[0] + 1, hi[1] + 1, hi[2] + 1}};
}

namespace {

Tensor crop_tensor(const Tensor& src, const AnnotationExtent& roi) {
    const Index3 sz = roi.sizes();
    for (int a = 0; a < 3; ++a) {
        if (roi.bbox_min[a] < 0 || roi.bbox_max[a] > src.extent(a) || sz[a] <= 0)
            throw std::invalid_argument("crop: roi outside volume bounds");
    }
    Tensor out({sz[0], sz[1], sz[2]});
    for (int d = 0; d < sz[0]; ++d)
        for (int h = 0; h < sz[1]; ++h)
            for (int w = 0; w < sz[2]; ++w)
                out.at(d, h, w) =
                    src.at(roi.bbox_min[0] + d, roi.bbox_min[1] + h, roi.bbox_min[2] + w);
    return out;
}

Vec3 shifted_origin(const Vec3& origin, const Vec3& spacing, const AnnotationExtent& roi) {
    return {origin[0] + roi.bbox_min[0] * spacing[0], origin[1] + roi.bbox_min[1] * spacing[1],
            origin[2] + roi.bbox_min[2] * spacing[2]};
}

}  // namespace

Volume crop(const Volume& vol, const AnnotationExtent& roi) {
    return Volume(crop_tensor(vol.data, roi), vol.spacing, shifted_origin(vol.origin, vol.spacing, roi));
}

LabelMask crop(const LabelMask& mask, const AnnotationExtent& roi) {
    return LabelMask(crop_tensor(mask.data, roi), mask.spacing,
                     shifted_origin(mask.origin, mask.spacing, roi));
}

}  // namespace vseg
