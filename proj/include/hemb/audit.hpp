#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hemb/model.hpp"

namespace hemb {

struct ParamSpec {
  std::string name;
  Shape shape;
};

/// Names and shapes of every trainable tensor, derived from the config alone
/// (nothing is allocated, so paper-scale configs are cheap to audit).
std::vector<ParamSpec> param_layout(const ModelConfig& config);

struct ParamRow {
  std::string block;
  std::size_t count = 0;
};

struct ParamAudit {
  std::vector<ParamRow> rows;  // encoder, embeddings, per-layer sub-blocks, head
  std::size_t total = 0;
  /// total(config) - total(config without CoFE)
  std::size_t cofe_delta = 0;
  /// total(Gaussian coupling on) - total(unit coupling weights)
  long long geometry_delta = 0;
};

ParamAudit count_params(const ModelConfig& config);

/// Sum of numel over the leaves of a built model.
std::size_t count_leaves(const ModelParams& params);

/**
 * Coarse per-sample FLOP estimate: 2 FLOPs per multiply-accumulate in dense
 * maps and convolutions, one per elementwise op in gating and normalization.
 */
struct FlopAudit {
  double total = 0.0;
  double cofe_delta = 0.0;
};

FlopAudit estimate_flops(const ModelConfig& config);

}  // namespace hemb
