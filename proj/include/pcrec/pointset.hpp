#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pcrec/tensor.hpp"

namespace pcrec {

// Unordered set of 3-D points. Row order carries no meaning except where a
// producer documents a parent/child layout.
struct PointCloud {
    std::vector<std::array<double, 3>> pts;

    PointCloud() = default;
    explicit PointCloud(std::vector<std::array<double, 3>> p) : pts(std::move(p)) {}
    PointCloud(std::initializer_list<std::array<double, 3>> p) : pts(p) {}

    std::size_t size() const { return pts.size(); }
    std::array<double, 3>& operator[](std::size_t i) { return pts[i]; }
    const std::array<double, 3>& operator[](std::size_t i) const { return pts[i]; }

    // [n, 3] tensor with the same row order.
    Tensor to_tensor() const;
    static PointCloud from_tensor(const Tensor& t);
};

struct TriangleMesh {
    std::vector<std::array<double, 3>> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;
};

// Bijection between two equal-size clouds plus its total Euclidean cost.
struct Assignment {
    std::vector<std::size_t> mapping;  // predicted index -> target index
    double cost = 0.0;
};

// Sum of squared nearest-neighbor distances in both directions (sums, not
// means). Partial sums are accumulated in sorted order so the value is
// bit-stable under row permutation of either cloud.
double chamfer(const PointCloud& a, const PointCloud& b);

// Differentiable version for [n,3] tensors; the nearest-neighbor
// correspondence is frozen at forward time.
Tensor chamfer(Tape& tape, const Tensor& a, const Tensor& b);

// Exact minimum-cost bijection under Euclidean costs, for oracle use. Capped
// because the solver is cubic.
Assignment emd_exact(const PointCloud& a, const PointCloud& b, std::size_t cap = 512);

// Auction assignment with epsilon scaling: feasible bijection with cost
// within a (1 + eps) factor of the optimum. eps is a relative slack target.
Assignment emd_approx(const PointCloud& a, const PointCloud& b, double eps);

// Differentiable: gradient of sum ||a_i - b_phi(i)|| with phi frozen at
// forward time. Pass `out` to observe the assignment.
Tensor emd_approx(Tape& tape, const Tensor& a, const Tensor& b, double eps,
                  Assignment* out = nullptr);

// Greedy max-min subset selection; result[0] == start, ties go to the lowest
// index. Returned indices are in pick order, so any prefix is itself a
// farthest-point sample.
std::vector<std::size_t> farthest_point_sample(const PointCloud& pc, std::size_t k,
                                               std::size_t start = 0);

// Indices within `radius` of the center point (center always included),
// sorted by ascending distance, at most `cap` kept (nearest win, ties to the
// lowest index).
std::vector<std::size_t> ball_query(const PointCloud& pc, std::size_t center_idx, double radius,
                                    std::size_t cap);

struct BboxTransform {
    double scale = 1.0;                        // applied after centering
    std::array<double, 3> offset = {0, 0, 0};  // bbox center of the input
};

// Centers the axis-aligned bounding box at the origin and scales uniformly so
// the longest edge is exactly 1: out = (p - offset) * scale.
PointCloud normalize_unit_bbox(const PointCloud& pc, BboxTransform* transform = nullptr);

PointCloud apply_inverse(const PointCloud& pc, const BboxTransform& t);

// Area-weighted surface sampling finalized by farthest-point selection from a
// 4x oversampled pool. Rows are in FPS pick order.
PointCloud sample_mesh_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);

double triangle_area(const std::array<double, 3>& a, const std::array<double, 3>& b,
                     const std::array<double, 3>& c);

}  // namespace pcrec
