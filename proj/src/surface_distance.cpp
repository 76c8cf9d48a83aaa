#include "vesselseg/surface_distance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace vseg {

namespace {

inline Point3 sub(const Point3& a, const Point3& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline double dot(const Point3& a, const Point3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline Point3 lerp2(const Point3& a, const Point3& ab, double t) {
    return {a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]};
}
inline double dist_sq(const Point3& a, const Point3& b) {
    const Point3 d = sub(a, b);
    return dot(d, d);
}

}  // namespace

Point3 closest_point_on_triangle(const Point3& p, const Point3& a, const Point3& b,
                                 const Point3& c) {
    const Point3 ab = sub(b, a), ac = sub(c, a), ap = sub(p, a);
    const double d1 = dot(ab, ap), d2 = dot(ac, ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Point3 bp = sub(p, b);
    const double d3 = dot(ab, bp), d4 = dot(ac, bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return lerp2(a, ab, d1 / (d1 - d3));

    const Point3 cp = sub(p, c);
    const double d5 = dot(ab, cp), d6 = dot(ac, cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return lerp2(a, ac, d2 / (d2 - d6));

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return lerp2(b, sub(c, b), w);
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return {a[0] + ab[0] * v + ac[0] * w, a[1] + ab[1] * v + ac[1] * w,
            a[2] + ab[2] * v + ac[2] * w};
}

double point_triangle_distance(const Point3& p, const Point3& a, const Point3& b,
                               const Point3& c) {
    return std::sqrt(dist_sq(p, closest_point_on_triangle(p, a, b, c)));
}

// ---- BVH -----------------------------------------------------------------------

TriangleBvh::TriangleBvh(const SurfaceMesh& mesh) {
    if (mesh.empty()) throw std::invalid_argument("cannot build BVH over an empty mesh");
    tris_.reserve(mesh.triangles.size());
    centroids_.reserve(mesh.triangles.size());
    for (const auto& t : mesh.triangles) {
        Tri tri{mesh.vertices[static_cast<std::size_t>(t[0])],
                mesh.vertices[static_cast<std::size_t>(t[1])],
                mesh.vertices[static_cast<std::size_t>(t[2])]};
        centroids_.push_back({(tri.a[0] + tri.b[0] + tri.c[0]) / 3.0,
                              (tri.a[1] + tri.b[1] + tri.c[1]) / 3.0,
                              (tri.a[2] + tri.b[2] + tri.c[2]) / 3.0});
        tris_.push_back(tri);
    }
    order_.resize(tris_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * tris_.size());
    root_ = build(0, static_cast<int>(tris_.size()));
}

int TriangleBvh::build(int begin, int end) {
    Node node;
    node.lo = {std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
               std::numeric_limits<double>::max()};
    node.hi = {std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest(),
               std::numeric_limits<double>::lowest()};
    for (int i = begin; i < end; ++i) {
        const Tri& t = tris_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
        for (const Point3* v : {&t.a, &t.b, &t.c})
            for (int a = 0; a < 3; ++a) {
                node.lo[static_cast<std::size_t>(a)] =
                    std::min(node.lo[static_cast<std::size_t>(a)], (*v)[static_cast<std::size_t>(a)]);
                node.hi[static_cast<std::size_t>(a)] =
                    std::max(node.hi[static_cast<std::size_t>(a)], (*v)[static_cast<std::size_t>(a)]);
            }
    }

    constexpr int kLeafSize = 4;
    if (end - begin <= kLeafSize) {
        node.begin = begin;
        node.end = end;
        nodes_.push_back(node);
        return static_cast<int>(nodes_.size()) - 1;
    }

    int axis = 0;
    double extent = node.hi[0] - node.lo[0];
    for (int a = 1; a < 3; ++a) {
        const double e = node.hi[static_cast<std::size_t>(a)] - node.lo[static_cast<std::size_t>(a)];
        if (e > extent) {
            extent = e;
            axis = a;
        }
    }
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int lhs, int rhs) {
                         return centroids_[static_cast<std::size_t>(lhs)][static_cast<std::size_t>(axis)] <
                                centroids_[static_cast<std::size_t>(rhs)][static_cast<std::size_t>(axis)];
                     });

    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[static_cast<std::size_t>(self)].left = left;
    nodes_[static_cast<std::size_t>(self)].right = right;
    return self;
}

double TriangleBvh::box_distance_sq(const Node& n, const Point3& p) const {
    double acc = 0.0;
    for (int a = 0; a < 3; ++a) {
        const double v = p[static_cast<std::size_t>(a)];
        double d = 0.0;
        if (v < n.lo[static_cast<std::size_t>(a)]) d = n.lo[static_cast<std::size_t>(a)] - v;
        else if (v > n.hi[static_cast<std::size_t>(a)]) d = v - n.hi[static_cast<std::size_t>(a)];
        acc += d * d;
    }
    return acc;
}

void TriangleBvh::query(int node_idx, const Point3& p, double& best_sq) const {
    const Node& n = nodes_[static_cast<std::size_t>(node_idx)];
    if (box_distance_sq(n, p) >= best_sq) return;
    if (n.left < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            const Tri& t = tris_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
            const double d = dist_sq(p, closest_point_on_triangle(p, t.a, t.b, t.c));
            best_sq = std::min(best_sq, d);
        }
        return;
    }
    // Visit the nearer child first for tighter pruning.
    const double dl = box_distance_sq(nodes_[static_cast<std::size_t>(n.left)], p);
    const double dr = box_distance_sq(nodes_[static_cast<std::size_t>(n.right)], p);
    if (dl <= dr) {
        query(n.left, p, best_sq);
        query(n.right, p, best_sq);
    } else {
        query(n.right, p, best_sq);
        query(n.left, p, best_sq);
    }
}

double TriangleBvh::nearest_distance(const Point3& p) const {
    double best_sq = std::numeric_limits<double>::max();
    query(root_, p, best_sq);
    return std::sqrt(best_sq);
}

// ---- surface error ---------------------------------------------------------------

double surface_error(const SurfaceMesh& gt, const SurfaceMesh& pred) {
    if (gt.vertices.empty() || pred.empty())
        throw std::invalid_argument("surface_error requires non-empty meshes");
    TriangleBvh bvh(pred);
    const std::int64_t n = static_cast<std::int64_t>(gt.vertices.size());
    // Per-vertex distances first, serial sum after: the result does not depend
    // on the thread count.
    std::vector<double> dist(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
        dist[static_cast<std::size_t>(i)] = bvh.nearest_distance(gt.vertices[static_cast<std::size_t>(i)]);
    double acc = 0.0;
    for (double d : dist) acc += d;
    return acc / static_cast<double>(n);
}

double symmetric_surface_error(const SurfaceMesh& a, const SurfaceMesh& b) {
    return 0.5 * (surface_error(a, b) + surface_error(b, a));
}

namespace serial {

double surface_error_bruteforce(const SurfaceMesh& gt, const SurfaceMesh& pred) {
    if (gt.vertices.empty() || pred.empty())
        throw std::invalid_argument("surface_error requires non-empty meshes");
    double acc = 0.0;
    for (const auto& p : gt.vertices) {
        double best = std::numeric_limits<double>::max();
        for (const auto& t : pred.triangles) {
            const double d = point_triangle_distance(
                p, pred.vertices[static_cast<std::size_t>(t[0])],
                pred.vertices[static_cast<std::size_t>(t[1])],
                pred.vertices[static_cast<std::size_t>(t[2])]);
            best = std::min(best, d);
        }
        acc += best;
    }
    return acc / static_cast<double>(gt.vertices.size());
}

}  // namespace serial

}  // namespace vseg
