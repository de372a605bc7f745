#include "hemb/cofe.hpp"

#include <cmath>

#include "hemb/errors.hpp"
#include "hemb/lgp.hpp"

namespace hemb {

CofeParams CofeParams::init(std::size_t channels, std::size_t groups, Rng& rng) {
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("CoFE groups " + std::to_string(groups) + " must divide channels " + std::to_string(channels));
  }
  const std::size_t cg = channels / groups;
  CofeParams p;
  p.groups = groups;
  p.gate_w = param_uniform({cg, cg}, 1.0 / std::sqrt(static_cast<double>(cg)), rng);
  p.gate_b = param_full({cg}, 0.0);
  p.gn_gamma = param_full({cg}, 1.0);
  p.gn_beta = param_full({cg}, 0.0);
  p.conv_w = param_uniform({cg, cg, 3}, 1.0 / std::sqrt(3.0 * static_cast<double>(cg)), rng);
  p.conv_b = param_full({cg}, 0.0);
  return p;
}

void CofeParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gate_w", gate_w});
  out.push_back({prefix + ".gate_b", gate_b});
  out.push_back({prefix + ".gn_gamma", gn_gamma});
  out.push_back({prefix + ".gn_beta", gn_beta});
  out.push_back({prefix + ".conv_w", conv_w});
  out.push_back({prefix + ".conv_b", conv_b});
}

Tensor group_reshape(const Tensor& x, std::size_t groups) {
  if (x.rank() != 3) throw ShapeError("group_reshape expects B x C x L, got " + shape_str(x.shape()));
  if (groups == 0 || x.dim(1) % groups != 0) {
    throw ConfigError("group count " + std::to_string(groups) + " does not divide " + std::to_string(x.dim(1)) +
                      " channels");
  }
  return reshape(x, {x.dim(0) * groups, x.dim(1) / groups, x.dim(2)});
}

Tensor group_unreshape(const Tensor& grouped, std::size_t batch) {
  if (grouped.rank() != 3 || batch == 0 || grouped.dim(0) % batch != 0) {
    throw ShapeError("group_unreshape of " + shape_str(grouped.shape()) + " into batch " + std::to_string(batch));
  }
  const std::size_t groups = grouped.dim(0) / batch;
  return reshape(grouped, {batch, groups * grouped.dim(1), grouped.dim(2)});
}

Tensor gated_norm_path(const Tensor& grouped, const CofeParams& params) {
  const std::size_t rows = grouped.dim(0);
  const std::size_t cg = grouped.dim(1);
  const std::size_t len = grouped.dim(2);
  const Tensor pooled = mean(grouped, 2);  // rows x cg
  const Tensor gate = reshape(sigmoid(linear(pooled, params.gate_w, params.gate_b)), {rows, cg, 1});
  const Tensor gated = grouped * gate;

  const Tensor flat = reshape(gated, {rows, cg * len});
  const Tensor centered = flat - mean(flat, 1, true);
  const Tensor normalized = reshape(centered / sqrt(variance(flat, 1, true) + kFeatureEps), {rows, cg, len});
  return normalized * reshape(params.gn_gamma, {cg, 1}) + reshape(params.gn_beta, {cg, 1});
}

Tensor conv_path(const Tensor& grouped, const CofeParams& params) {
  return conv1d(grouped, params.conv_w, params.conv_b);
}

Tensor compress(const Tensor& path) { return softmax(mean(path, 1, true), 2); }

Tensor cross_interact(const Tensor& x1, const Tensor& x2) {
  if (x1.shape() != x2.shape()) {
    throw ShapeError("cross_interact paths differ: " + shape_str(x1.shape()) + " vs " + shape_str(x2.shape()));
  }
  const Tensor s12 = compress(x1) * mean(x2, 1, true);
  const Tensor s21 = compress(x2) * mean(x1, 1, true);
  return sigmoid(s12 + s21);
}

Tensor cofe_forward(const Tensor& x, const CofeParams& params) {
  const Tensor grouped = group_reshape(x, params.groups);
  if (grouped.dim(1) != params.group_channels()) {
    throw ShapeError("CoFE weights are for " + std::to_string(params.group_channels()) +
                     " channels per group, input has " + std::to_string(grouped.dim(1)));
  }
  const Tensor x1 = gated_norm_path(grouped, params);
  const Tensor x2 = conv_path(grouped, params);
  const Tensor weights = cross_interact(x1, x2);
  return group_unreshape(grouped * weights, x.dim(0));
}

}  // namespace hemb
