#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hemb/rng.hpp"
#include "hemb/tensor.hpp"

namespace hemb {

/// A trainable leaf and its dotted path inside the model.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

Tensor param_normal(const Shape& shape, double stddev, Rng& rng);
Tensor param_uniform(const Shape& shape, double bound, Rng& rng);
Tensor param_full(const Shape& shape, double value);

/// y = x W^T + b with W: out x in.
struct Linear {
  Tensor w;
  Tensor b;

  /// Kaiming-uniform style init, bound 1/sqrt(in); zero bias.
  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace hemb
