#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hemb/geometry.hpp"
#include "hemb/nn.hpp"
#include "hemb/tensor.hpp"

namespace hemb {

inline constexpr double kFeatureEps = 1e-5;

/// Affine propagation (gamma, beta over 2C channels) and the 2C -> C shared MLP.
struct LgpParams {
  Tensor gamma;
  Tensor beta;
  Linear mlp_in;   // 2C -> C
  Linear mlp_out;  // C -> C

  static LgpParams init(std::size_t channels, Rng& rng);
  std::size_t channels() const { return mlp_out.w.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/**
 * Token-level neighborhoods: for each patch token, the K nearest patch
 * centers (itself first) and the Gaussian coupling weight of each.
 *
 * Weights are computed on the normalized neighborhood coordinates, so the
 * structure is invariant to translating or uniformly scaling the cloud.
 */
struct LgpGeometry {
  std::size_t k = 0;
  std::vector<std::size_t> neighbor_idx;  // L*K indices into the patch tokens
  Tensor weights;                         // L x K x 1, constant

  std::size_t num_centers() const { return k ? neighbor_idx.size() / k : 0; }
};

/// `gaussian = false` gives unit weights (coupling ablation).
LgpGeometry make_lgp_geometry(std::span<const Point3> centers, std::size_t k, bool gaussian = true);

/// (F_K - F_C) / sqrt(Var_K(F_K - F_C) + eps), variance per (center, channel).
Tensor normalize_relative_features(const Tensor& neighbors, const Tensor& centers, double eps = kFeatureEps);

/// Concat(normalized neighbors, broadcast centers) * gamma + beta: L x K x 2C.
Tensor propagate_affine(const Tensor& normalized, const Tensor& centers, const LgpParams& params);

/// Broadcasts the L x K x 1 weights across channels.
Tensor couple_geometry(const Tensor& features, const Tensor& weights);

/// sum_k F exp(F) / sum_k exp(F) over axis 1: L x K x D -> L x D.
Tensor softmax_aggregate(const Tensor& weighted);

/**
 * Local geometric pooling over an (L+1) x C token sequence.
 *
 * Returns the branch output with the same shape. Row 0 (class token) is
 * zero: the class token has no geometry and is carried by the residual.
 */
Tensor lgp_forward(const Tensor& tokens, const LgpGeometry& geometry, const LgpParams& params);

}  // namespace hemb
