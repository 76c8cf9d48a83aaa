#pragma once

#include <array>
#include <vector>

#include "vesselseg/mesh.hpp"

namespace vseg {

using Point3 = std::array<double, 3>;

/// Exact closest point on a triangle (Ericson's barycentric region walk).
Point3 closest_point_on_triangle(const Point3& p, const Point3& a, const Point3& b,
                                 const Point3& c);

double point_triangle_distance(const Point3& p, const Point3& a, const Point3& b, const Point3& c);

/// Median-split AABB tree over a triangle mesh for nearest-triangle queries.
class TriangleBvh {
public:
    explicit TriangleBvh(const SurfaceMesh& mesh);

    /// Exact distance from p to the nearest point of the mesh surface.
    double nearest_distance(const Point3& p) const;

private:
    struct Node {
        Point3 lo, hi;
        int left = -1, right = -1;   // children, -1 for leaves
        int begin = 0, end = 0;      // triangle range for leaves
    };
    struct Tri {
        Point3 a, b, c;
    };

    double box_distance_sq(const Node& n, const Point3& p) const;
    int build(int begin, int end);
    void query(int node, const Point3& p, double& best_sq) const;

    std::vector<Node> nodes_;
    std::vector<Tri> tris_;
    std::vector<Point3> centroids_;
    std::vector<int> order_;
    int root_ = -1;
};

/// Directional mean surface distance (Eq-style): for every vertex of `gt`,
/// the exact distance to the nearest triangle of `pred`, averaged over the
/// gt vertices. Accelerated by the AABB tree; parallel over vertices.
double surface_error(const SurfaceMesh& gt, const SurfaceMesh& pred);

/// Symmetric variant for diagnostics: mean of both directional errors.
double symmetric_surface_error(const SurfaceMesh& a, const SurfaceMesh& b);

namespace serial {
/// O(V*T) reference used to validate the accelerated search.
double surface_error_bruteforce(const SurfaceMesh& gt, const SurfaceMesh& pred);
}  // namespace serial

}  // namespace vseg
