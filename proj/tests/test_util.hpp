#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hemb/geometry.hpp"
#include "hemb/rng.hpp"
#include "hemb/tensor.hpp"

namespace testutil {

inline hemb::Tensor random_tensor(const hemb::Shape& shape, hemb::Rng& rng, bool requires_grad = false,
                                  double scale = 1.0) {
  std::vector<double> v(hemb::shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return hemb::Tensor(shape, std::move(v), requires_grad);
}

inline std::vector<hemb::Point3> random_points(std::size_t n, hemb::Rng& rng, double extent = 1.0) {
  std::vector<hemb::Point3> pts(n);
  for (auto& p : pts) p = {rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent)};
  return pts;
}

inline hemb::Tensor points_tensor(const std::vector<hemb::Point3>& pts) {
  std::vector<double> v;
  for (const auto& p : pts) v.insert(v.end(), p.begin(), p.end());
  return hemb::Tensor({pts.size(), 3}, std::move(v));
}

inline double max_abs_diff(const hemb::Tensor& a, const hemb::Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

inline std::vector<double> values(const hemb::Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace testutil
