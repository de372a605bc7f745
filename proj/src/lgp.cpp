#include "hemb/lgp.hpp"

#include <numeric>
#include <string>

#include "hemb/errors.hpp"

namespace hemb {

LgpParams LgpParams::init(std::size_t channels, Rng& rng) {
  LgpParams p;
  p.gamma = param_full({2 * channels}, 1.0);
  p.beta = param_full({2 * channels}, 0.0);
  p.mlp_in = Linear::init(2 * channels, channels, rng);
  p.mlp_out = Linear::init(channels, channels, rng);
  return p;
}

void LgpParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
  mlp_in.collect(prefix + ".mlp_in", out);
  mlp_out.collect(prefix + ".mlp_out", out);
}

LgpGeometry make_lgp_geometry(std::span<const Point3> centers, std::size_t k, bool gaussian) {
  if (centers.size() < k) {
    throw CapacityError("LGP neighborhood of " + std::to_string(k) + " needs at least that many centers, got " +
                        std::to_string(centers.size()));
  }
  std::vector<std::size_t> all(centers.size());
  std::iota(all.begin(), all.end(), 0);
  LgpGeometry geo;
  geo.k = k;
  geo.neighbor_idx = knn_indices(centers, all, k);
  std::vector<double> w(geo.neighbor_idx.size(), 1.0);
  if (gaussian) {
    std::vector<Point3> patch(k);
    for (std::size_t i = 0; i < centers.size(); ++i) {
      for (std::size_t j = 0; j < k; ++j) patch[j] = centers[geo.neighbor_idx[i * k + j]];
      const auto normalized = normalize_patch(patch);
      // Slot 0 sits at distance zero from the center, so it is the center's
      // normalized position.
      const auto wi = gaussian_weights(normalized, normalized[0]);
      std::copy(wi.begin(), wi.end(), w.begin() + static_cast<std::ptrdiff_t>(i * k));
    }
  }
  geo.weights = Tensor({centers.size(), k, 1}, std::move(w));
  return geo;
}

Tensor normalize_relative_features(const Tensor& neighbors, const Tensor& centers, double eps) {
  if (neighbors.rank() != 3 || centers.rank() != 2 || neighbors.dim(0) != centers.dim(0) ||
      neighbors.dim(2) != centers.dim(1)) {
    throw ShapeError("normalize_relative_features of " + shape_str(neighbors.shape()) + " and " +
                     shape_str(centers.shape()));
  }
  const Tensor offset = neighbors - reshape(centers, {centers.dim(0), 1, centers.dim(1)});
  return offset / sqrt(variance(offset, 1, true) + eps);
}

Tensor propagate_affine(const Tensor& normalized, const Tensor& centers, const LgpParams& params) {
  const std::size_t l = normalized.dim(0);
  const std::size_t k = normalized.dim(1);
  const std::size_t c = normalized.dim(2);
  std::vector<std::size_t> repeat(l * k);
  for (std::size_t i = 0; i < l; ++i) std::fill_n(repeat.begin() + static_cast<std::ptrdiff_t>(i * k), k, i);
  const Tensor broadcast_centers = reshape(index_select(centers, repeat), {l, k, c});
  return concat({normalized, broadcast_centers}, 2) * params.gamma + params.beta;
}

Tensor couple_geometry(const Tensor& features, const Tensor& weights) {
  if (weights.rank() != 3 || weights.dim(2) != 1 || weights.dim(0) != features.dim(0) ||
      weights.dim(1) != features.dim(1)) {
    throw ShapeError("coupling weights " + shape_str(weights.shape()) + " for features " +
                     shape_str(features.shape()));
  }
  return features * weights;
}

Tensor softmax_aggregate(const Tensor& weighted) { return sum(weighted * softmax(weighted, 1), 1); }

Tensor lgp_forward(const Tensor& tokens, const LgpGeometry& geometry, const LgpParams& params) {
  const std::size_t l = geometry.num_centers();
  const std::size_t k = geometry.k;
  const std::size_t c = params.channels();
  if (tokens.rank() != 2 || tokens.dim(0) != l + 1 || tokens.dim(1) != c) {
    throw ShapeError("lgp_forward tokens " + shape_str(tokens.shape()) + " for " + std::to_string(l) +
                     " patches of width " + std::to_string(c));
  }
  if (l < k) throw CapacityError("fewer centers than the LGP neighborhood size");

  const Tensor centers = slice(tokens, 0, 1, l);
  const Tensor neighbors = reshape(index_select(centers, geometry.neighbor_idx), {l, k, c});
  const Tensor normalized = normalize_relative_features(neighbors, centers);
  const Tensor propagated = propagate_affine(normalized, centers, params);
  const Tensor coupled = couple_geometry(propagated, geometry.weights);
  const Tensor pooled = softmax_aggregate(coupled);
  const Tensor aligned = params.mlp_out(relu(params.mlp_in(pooled)));
  return concat({Tensor::zeros({1, c}), aligned}, 0);
}

}  // namespace hemb
