#include "hemb/nn.hpp"

#include <cmath>

namespace hemb {

Tensor param_normal(const Shape& shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(shape, std::move(v), true);
}

Tensor param_uniform(const Shape& shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(shape, std::move(v), true);
}

Tensor param_full(const Shape& shape, double value) { return Tensor::full(shape, value, true); }

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, bool bias) {
  Linear l;
  l.w = param_uniform({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (bias) l.b = param_full({out}, 0.0);
  return l;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w});
  if (b.defined()) out.push_back({prefix + ".b", b});
}

}  // namespace hemb
