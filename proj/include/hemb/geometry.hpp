#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace hemb {

using Point3 = std::array<double, 3>;

/// N x 3 coordinates with an optional class label.
struct PointCloud {
  std::vector<Point3> points;
  std::optional<std::size_t> label;

  std::size_t size() const { return points.size(); }
};

/// L centers with K neighbors each, extracted by FPS + KNN.
struct PatchSet {
  std::vector<std::size_t> center_idx;    // L
  std::vector<Point3> centers;            // L
  std::vector<std::size_t> neighbor_idx;  // L*K, row-major
  std::vector<Point3> neighbor_points;    // L*K, row-major
  std::size_t k = 0;

  std::size_t num_patches() const { return center_idx.size(); }
  std::span<const Point3> patch(std::size_t i) const {
    return std::span<const Point3>(neighbor_points).subspan(i * k, k);
  }
};

double squared_distance(const Point3& a, const Point3& b);

/// Position of every point in the lexicographic (x, y, z) order of the cloud,
/// with the original index as the last key. All ties are broken on this rank.
std::vector<std::size_t> canonical_rank(std::span<const Point3> points);

/**
 * Greedy max-min selection of `count` points.
 *
 * Starts from the lexicographically smallest point. Distance ties go to the
 * lowest canonical rank, so the selected coordinates do not depend on the
 * input order. Returns indices into the cloud in selection order.
 */
std::vector<std::size_t> farthest_point_sampling(std::span<const Point3> points, std::size_t count);
std::vector<std::size_t> farthest_point_sampling(const PointCloud& cloud, std::size_t count);

/// K nearest points of each center, sorted by (distance, canonical rank).
PatchSet knn(const PointCloud& cloud, std::span<const std::size_t> center_idx, std::size_t k);
/// Neighbor indices only, over a plain point list.
std::vector<std::size_t> knn_indices(std::span<const Point3> points, std::span<const std::size_t> center_idx,
                                     std::size_t k);

/// FPS followed by KNN.
PatchSet make_patches(const PointCloud& cloud, std::size_t num_groups, std::size_t group_size);

inline constexpr double kPatchEps = 1e-5;

/// (p - mu) / sqrt(mean ||p - mu||^2 + eps), mu the patch centroid.
std::vector<Point3> normalize_patch(std::span<const Point3> patch, double eps = kPatchEps);

/// exp(-||p_i - center||); no trainable state.
std::vector<double> gaussian_weights(std::span<const Point3> patch, const Point3& center);

}  // namespace hemb
