#pragma once

#include <array>
#include <stdexcept>

#include "vesselseg/tensor.hpp"

namespace vseg {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

/// 3D scalar intensity grid with physical spacing. Axis order is (D,H,W);
/// spacing[i] is the voxel pitch in mm along axis i.
struct Volume {
    Tensor data;                      // shape (D,H,W)
    Vec3 spacing{1.0, 1.0, 1.0};      // mm/voxel
    Vec3 origin{0.0, 0.0, 0.0};      // mm

    Volume() = default;
    Volume(Tensor d, Vec3 sp, Vec3 org = {0.0, 0.0, 0.0})
        : data(std::move(d)), spacing(sp), origin(org) {
        validate();
    }

    int dim(int axis) const { return data.extent(axis); }

    void validate() const {
        if (data.rank() != 3) throw std::invalid_argument("volume must be rank 3");
        for (double s : spacing)
            if (!(s > 0.0)) throw std::invalid_argument("volume spacing must be positive");
    }
};

/// Binary mask paired with a Volume: same shape, values exactly {0,1}.
struct LabelMask {
    Tensor data;  // shape (D,H,W), values in {0,1}
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    LabelMask() = default;
    LabelMask(Tensor d, Vec3 sp, Vec3 org = {0.0, 0.0, 0.0})
        : data(std::move(d)), spacing(sp), origin(org) {}

    int dim(int axis) const { return data.extent(axis); }

    std::size_t foreground_count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data[i] != 0.0) ++n;
        return n;
    }
};

/// Half-open voxel box [bbox_min, bbox_max) delimiting the annotated region.
struct AnnotationExtent {
    Index3 bbox_min{0, 0, 0};
    Index3 bbox_max{0, 0, 0};  // exclusive

    bool contains(int d, int h, int w) const {
        return d >= bbox_min[0] && d < bbox_max[0] && h >= bbox_min[1] && h < bbox_max[1] &&
               w >= bbox_min[2] && w < bbox_max[2];
    }

    /// True when the box [lo, lo+size) lies entirely inside this extent.
    bool contains_box(const Index3& lo, int size) const {
        for (int a = 0; a < 3; ++a)
            if (lo[a] < bbox_min[a] || lo[a] + size > bbox_max[a]) return false;
        return true;
    }

    /// True when the box [lo, lo+size) has empty intersection with this extent.
    bool disjoint_box(const Index3& lo, int size) const {
        for (int a = 0; a < 3; ++a)
            if (lo[a] + size <= bbox_min[a] || lo[a] >= bbox_max[a]) return true;
        return false;
    }

    Index3 sizes() const {
        return {bbox_max[0] - bbox_min[0], bbox_max[1] - bbox_min[1], bbox_max[2] - bbox_min[2]};
    }
};

/// Tightest axis-aligned box containing every foreground voxel.
/// Throws if the mask is empty.
AnnotationExtent mask_bounding_box(const LabelMask& mask);

/// Crop to a voxel box. Origin is shifted so physical coordinates are preserved.
Volume crop(const Volume& vol, const AnnotationExtent& roi);
LabelMask crop(const LabelMask& mask, const AnnotationExtent& roi);

}  // namespace vseg
