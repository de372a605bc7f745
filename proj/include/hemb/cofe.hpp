#pragma once

#include <cstddef>
#include <string>

#include "hemb/nn.hpp"
#include "hemb/tensor.hpp"

namespace hemb {

/**
 * Collaborative feature enhancer weights. All of them act on one channel
 * group (C/g channels) and are shared across groups and batch items.
 */
struct CofeParams {
  std::size_t groups = 1;
  Tensor gate_w;    // C/g x C/g (1-wide conv)
  Tensor gate_b;    // C/g
  Tensor gn_gamma;  // C/g
  Tensor gn_beta;   // C/g
  Tensor conv_w;    // C/g x C/g x 3
  Tensor conv_b;    // C/g

  static CofeParams init(std::size_t channels, std::size_t groups, Rng& rng);
  std::size_t group_channels() const { return gate_w.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// B x C x L -> (B*g) x (C/g) x L. Pure relabeling of the same storage order.
Tensor group_reshape(const Tensor& x, std::size_t groups);
/// Inverse of group_reshape.
Tensor group_unreshape(const Tensor& grouped, std::size_t batch);

/// GN(X' * sigmoid(conv1x1(avgpool_L(X')))), one normalization group per row.
Tensor gated_norm_path(const Tensor& grouped, const CofeParams& params);

/// Width-3 zero-padded convolution along L.
Tensor conv_path(const Tensor& grouped, const CofeParams& params);

/// softmax_L(mean over channels): (B*g) x 1 x L.
Tensor compress(const Tensor& path);

/**
 * sigmoid(phi(X1) * mean_c(X2) + phi(X2) * mean_c(X1)), evaluated position by
 * position: each path's attention over L weights the other path's channel
 * mean at the same position. Shape (B*g) x 1 x L.
 */
Tensor cross_interact(const Tensor& x1, const Tensor& x2);

/// X' * W reshaped back to B x C x L.
Tensor cofe_forward(const Tensor& x, const CofeParams& params);

}  // namespace hemb
