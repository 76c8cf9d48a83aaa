#pragma once

#include <string>

#include "vesselseg/volume.hpp"

namespace vseg {

/// Load a volumetric image. Supported formats, chosen by extension:
///   .nii / .nii.gz   NIfTI-1 (uint8, int16, uint16, int32, float32, float64)
///   .raw             raw little-endian float64 array with a .raw.json sidecar
/// Rejects non-finite intensities and missing/invalid spacing.
Volume load_volume(const std::string& path);

/// Save as NIfTI-1 (float64 payload) or raw fixture, by extension.
void save_volume(const Volume& vol, const std::string& path);

/// Load a binary mask from the same formats. Any nonzero voxel is foreground.
LabelMask load_mask(const std::string& path);

/// Save a mask as NIfTI-1 uint8 (or raw fixture).
void save_mask(const LabelMask& mask, const std::string& path);

}  // namespace vseg
