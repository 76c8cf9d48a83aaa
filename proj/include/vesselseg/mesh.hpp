#pragma once

#include <array>
#include <string>
#include <vector>

#include "vesselseg/volume.hpp"

namespace vseg {

/// Triangle mesh in physical coordinates. Vertex components follow the volume
/// axis order (axis0, axis1, axis2) = voxel index * spacing + origin, in mm.
struct SurfaceMesh {
    std::vector<std::array<double, 3>> vertices;
    std::vector<std::array<int, 3>> triangles;

    bool empty() const { return triangles.empty(); }
};

/// Iso-surface at level 0.5 of the binary field via marching cubes. The field
/// is implicitly padded with a zero layer, so meshes of fully foreground
/// regions are closed. Shared vertices are welded. Throws on an empty mask.
SurfaceMesh extract_surface(const LabelMask& mask);

/// ASCII STL / OBJ export for external viewers. Vertex components are written
/// in (x,y,z) = (axis2, axis1, axis0) order.
void write_stl(const SurfaceMesh& mesh, const std::string& path);
void write_obj(const SurfaceMesh& mesh, const std::string& path);

}  // namespace vseg
