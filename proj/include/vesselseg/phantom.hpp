#pragma once

#include <cstdint>
#include <string>

#include "vesselseg/manifest.hpp"
#include "vesselseg/volume.hpp"

namespace vseg {

struct IntensityBand {
    double mean = 0.0;
    double sigma = 8.0;
};

/// Synthetic vascular case: a recursive capsule tree inside a tissue
/// ellipsoid, with full ground truth plus a deliberately partial annotation
/// covering only branches at or above the annotation radius threshold.
struct PhantomSpec {
    int grid_size = 64;
    double spacing_mm = 0.35;
    int tree_depth = 4;                 // branching generations below the trunk
    double trunk_radius_mm = 2.2;
    double radius_decay = 0.7;
    double trunk_length_mm = 7.5;
    double length_decay = 0.78;
    double branch_angle_min_deg = 20.0;
    double branch_angle_max_deg = 50.0;
    IntensityBand background{20.0, 8.0};
    IntensityBand tissue{80.0, 8.0};
    IntensityBand vessel{160.0, 8.0};
    double noise_sigma = 4.0;
    double annotation_radius_mm = 1.3;  // branches thinner than this stay unlabeled
    std::uint64_t seed = 0;

    void validate() const;
};

struct PhantomCase {
    Volume volume;
    LabelMask full_mask;     // every branch
    LabelMask partial_mask;  // main vessels only (radius >= threshold)
    AnnotationExtent extent; // bbox of the partial mask, dilated by 2 voxels
};

/// Deterministic per seed. Throws when the partial mask comes out empty
/// (annotation threshold above every branch radius), since no annotation
/// extent exists downstream. Emits a warning when branches leave the grid and
/// get clipped.
PhantomCase generate_phantom(const PhantomSpec& spec);

/// Writes n cases (varied seeds) in the standard layout:
///   out_dir/case_XX/{volume,mask,full_mask}.nii.gz + out_dir/manifest.json
/// The manifest's `mask` is the partial annotation; `full_mask` rides along
/// for fine-vessel evaluation. One patient per case.
DatasetManifest phantom_suite(int n_cases, const PhantomSpec& base_spec, std::uint64_t seed,
                              const std::string& out_dir);

/// Capsule (sphere-swept segment) rasterization: voxels whose center lies
/// within `radius_mm` of the segment become foreground. Positions are
/// voxel_index * spacing.
void rasterize_capsule(Tensor& mask, const Vec3& p0, const Vec3& p1, double radius_mm,
                       double spacing_mm);

namespace serial {
/// Reference implementation for kernel tests.
void rasterize_capsule(Tensor& mask, const Vec3& p0, const Vec3& p1, double radius_mm,
                       double spacing_mm);
}  // namespace serial

}  // namespace vseg
