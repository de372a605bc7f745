#include "hemb/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "hemb/errors.hpp"

namespace hemb {

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

std::vector<std::size_t> canonical_rank(std::span<const Point3> points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a] != points[b]) return points[a] < points[b];
    return a < b;
  });
  std::vector<std::size_t> rank(points.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

std::vector<std::size_t> farthest_point_sampling(std::span<const Point3> points, std::size_t count) {
  const std::size_t n = points.size();
  if (count == 0) throw CapacityError("farthest point sampling of zero points");
  if (count > n) {
    throw CapacityError("cannot sample " + std::to_string(count) + " centers from " + std::to_string(n) + " points");
  }
  const auto rank = canonical_rank(points);
  std::vector<std::size_t> by_rank(n);
  for (std::size_t i = 0; i < n; ++i) by_rank[rank[i]] = i;

  std::vector<std::size_t> selected;
  selected.reserve(count);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t current = by_rank[0];
  for (std::size_t s = 0; s < count; ++s) {
    selected.push_back(current);
    nearest[current] = -1.0;
    double best = -1.0;
    std::size_t best_idx = current;
    // Walking in canonical order makes the strict '>' keep the lowest rank on ties.
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = by_rank[r];
      if (nearest[i] < 0.0) continue;
      nearest[i] = std::min(nearest[i], squared_distance(points[i], points[current]));
      if (nearest[i] > best) {
        best = nearest[i];
        best_idx = i;
      }
    }
    current = best_idx;
  }
  return selected;
}

std::vector<std::size_t> farthest_point_sampling(const PointCloud& cloud, std::size_t count) {
  return farthest_point_sampling(cloud.points, count);
}

std::vector<std::size_t> knn_indices(std::span<const Point3> points, std::span<const std::size_t> center_idx,
                                     std::size_t k) {
  const std::size_t n = points.size();
  if (k == 0) throw CapacityError("knn with K = 0");
  if (k > n) throw CapacityError("K = " + std::to_string(k) + " exceeds cloud size " + std::to_string(n));
  const auto rank = canonical_rank(points);
  std::vector<std::size_t> out;
  out.reserve(center_idx.size() * k);
  std::vector<std::pair<double, std::size_t>> cand(n);
  for (std::size_t c : center_idx) {
    if (c >= n) throw CapacityError("center index " + std::to_string(c) + " out of range");
    for (std::size_t i = 0; i < n; ++i) cand[i] = {squared_distance(points[i], points[c]), rank[i]};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) out.push_back(cand[j].second);
  }
  // Ranks back to indices.
  std::vector<std::size_t> by_rank(n);
  for (std::size_t i = 0; i < n; ++i) by_rank[rank[i]] = i;
  for (auto& idx : out) idx = by_rank[idx];
  return out;
}

PatchSet knn(const PointCloud& cloud, std::span<const std::size_t> center_idx, std::size_t k) {
  PatchSet set;
  set.k = k;
  set.neighbor_idx = knn_indices(cloud.points, center_idx, k);
  set.center_idx.assign(center_idx.begin(), center_idx.end());
  set.centers.reserve(center_idx.size());
  for (std::size_t c : center_idx) set.centers.push_back(cloud.points[c]);
  set.neighbor_points.reserve(set.neighbor_idx.size());
  for (std::size_t i : set.neighbor_idx) set.neighbor_points.push_back(cloud.points[i]);
  return set;
}

PatchSet make_patches(const PointCloud& cloud, std::size_t num_groups, std::size_t group_size) {
  const auto centers = farthest_point_sampling(cloud, num_groups);
  return knn(cloud, centers, group_size);
}

std::vector<Point3> normalize_patch(std::span<const Point3> patch, double eps) {
  if (patch.empty()) throw CapacityError("normalize_patch of an empty patch");
  const double m = static_cast<double>(patch.size());
  Point3 mu{0.0, 0.0, 0.0};
  for (const auto& p : patch) {
    for (int d = 0; d < 3; ++d) mu[d] += p[d];
  }
  for (int d = 0; d < 3; ++d) mu[d] /= m;
  double spread = 0.0;
  for (const auto& p : patch) spread += squared_distance(p, mu);
  const double scale = std::sqrt(spread / m + eps);
  std::vector<Point3> out;
  out.reserve(patch.size());
  for (const auto& p : patch) out.push_back({(p[0] - mu[0]) / scale, (p[1] - mu[1]) / scale, (p[2] - mu[2]) / scale});
  return out;
}

std::vector<double> gaussian_weights(std::span<const Point3> patch, const Point3& center) {
  std::vector<double> w;
  w.reserve(patch.size());
  for (const auto& p : patch) w.push_back(std::exp(-std::sqrt(squared_distance(p, center))));
  return w;
}

}  // namespace hemb
