#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>

#include "hemb/errors.hpp"
#include "hemb/tensor.hpp"

namespace hemb {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Right-aligned broadcasting. Strides are zero along broadcast axes.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size());
  std::size_t s = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i] = s;
    s *= shape[i];
  }
  return strides;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  auto sa = contiguous_strides(pa);
  auto sb = contiguous_strides(pb);
  plan.stride_a.resize(rank);
  plan.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    plan.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    plan.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return plan;
}

// Calls fn(out_index, a_index, b_index) over the broadcast output. The last
// axis runs as a plain inner loop.
template <typename Fn>
void for_each_broadcast(const Broadcast& plan, Fn&& fn) {
  const std::size_t n = shape_numel(plan.out);
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const std::size_t rank = plan.out.size();
  const std::size_t inner = plan.out[rank - 1];
  const std::size_t sa = plan.stride_a[rank - 1];
  const std::size_t sb = plan.stride_b[rank - 1];
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; i += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(i + j, ia + j * sa, ib + j * sb);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (counter[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * counter[d];
      ib -= plan.stride_b[d] * counter[d];
      counter[d] = 0;
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool is_binary(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::add:
    case ElementwiseOp::sub:
    case ElementwiseOp::mul:
    case ElementwiseOp::div:
      return true;
    default:
      return false;
  }
}

Tensor binary_op(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw ContractError("binary elementwise op needs two tensors");
  const Broadcast plan = plan_broadcast(a.shape(), b.shape());
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(shape_numel(plan.out));
  switch (op) {
    case ElementwiseOp::add:
      for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] + bv[ib]; });
      break;
    case ElementwiseOp::sub:
      for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] - bv[ib]; });
      break;
    case ElementwiseOp::mul:
      for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] * bv[ib]; });
      break;
    case ElementwiseOp::div:
      if (checked_mode() && std::any_of(bv.begin(), bv.end(), [](double v) { return v == 0.0; })) {
        throw NumericError("division by exact zero");
      }
      for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] / bv[ib]; });
      break;
    default:
      throw ContractError("not a binary op");
  }
  return Tensor::from_op(plan.out, std::move(out), {a, b},
                         [plan, a, b, op](std::span<const double> g, std::span<const std::span<double>> gi) {
                           auto av = a.data();
                           auto bv = b.data();
                           std::span<double> ga = gi[0];
                           std::span<double> gb = gi[1];
                           const auto each = [&](auto&& fn) { for_each_broadcast(plan, fn); };
                           switch (op) {
                             case ElementwiseOp::add:
                             case ElementwiseOp::sub: {
                               const double sign = op == ElementwiseOp::add ? 1.0 : -1.0;
                               if (!ga.empty()) each([&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
                               if (!gb.empty()) {
                                 each([&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] += sign * g[i]; });
                               }
                               break;
                             }
                             case ElementwiseOp::mul:
                               if (!ga.empty()) {
                                 each([&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * bv[ib]; });
                               }
                               if (!gb.empty()) {
                                 each([&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * av[ia]; });
                               }
                               break;
                             case ElementwiseOp::div:
                               if (!ga.empty()) {
                                 each([&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] / bv[ib]; });
                               }
                               if (!gb.empty()) {
                                 each([&](std::size_t i, std::size_t ia, std::size_t ib) {
                                   gb[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib]);
                                 });
                               }
                               break;
                             default:
                               break;
                           }
                         });
}

Tensor unary_op(ElementwiseOp op, const Tensor& a) {
  auto av = a.data();
  std::vector<double> out(av.size());
  switch (op) {
    case ElementwiseOp::exp:
      std::transform(av.begin(), av.end(), out.begin(), [](double x) { return std::exp(x); });
      break;
    case ElementwiseOp::neg:
      std::transform(av.begin(), av.end(), out.begin(), [](double x) { return -x; });
      break;
    case ElementwiseOp::sigmoid:
      std::transform(av.begin(), av.end(), out.begin(), stable_sigmoid);
      break;
    case ElementwiseOp::softplus:
      std::transform(av.begin(), av.end(), out.begin(), stable_softplus);
      break;
    case ElementwiseOp::relu:
      std::transform(av.begin(), av.end(), out.begin(), [](double x) { return x > 0.0 ? x : 0.0; });
      break;
    case ElementwiseOp::log:
      std::transform(av.begin(), av.end(), out.begin(), [](double x) { return std::log(x); });
      break;
    case ElementwiseOp::sqrt:
      std::transform(av.begin(), av.end(), out.begin(), [](double x) { return std::sqrt(x); });
      break;
    default:
      throw ContractError("not a unary op");
  }
  // The backward rules read the forward output, so it is captured by value.
  std::vector<double> y = out;
  return Tensor::from_op(
      a.shape(), std::move(out), {a},
      [op, a, y = std::move(y)](std::span<const double> g, std::span<const std::span<double>> gi) {
        std::span<double> ga = gi[0];
        auto av = a.data();
        const std::size_t n = g.size();
        switch (op) {
          case ElementwiseOp::exp:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i];
            break;
          case ElementwiseOp::neg:
            for (std::size_t i = 0; i < n; ++i) ga[i] -= g[i];
            break;
          case ElementwiseOp::sigmoid: {
            const double skew = testing::active_fault() == testing::Fault::sigmoid_backward ? 1.01 : 1.0;
            for (std::size_t i = 0; i < n; ++i) ga[i] += skew * g[i] * y[i] * (1.0 - y[i]);
            break;
          }
          case ElementwiseOp::softplus:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * stable_sigmoid(av[i]);
            break;
          case ElementwiseOp::relu:
            for (std::size_t i = 0; i < n; ++i) ga[i] += av[i] > 0.0 ? g[i] : 0.0;
            break;
          case ElementwiseOp::log:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / av[i];
            break;
          case ElementwiseOp::sqrt:
            for (std::size_t i = 0; i < n; ++i) ga[i] += 0.5 * g[i] / y[i];
            break;
          default:
            break;
        }
      });
}

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  if (is_binary(op)) return binary_op(op, a, b);
  return unary_op(op, a);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseOp::div, a, b); }
Tensor exp(const Tensor& a) { return unary_op(ElementwiseOp::exp, a); }
Tensor neg(const Tensor& a) { return unary_op(ElementwiseOp::neg, a); }
Tensor sigmoid(const Tensor& a) { return unary_op(ElementwiseOp::sigmoid, a); }
Tensor softplus(const Tensor& a) { return unary_op(ElementwiseOp::softplus, a); }
Tensor relu(const Tensor& a) { return unary_op(ElementwiseOp::relu, a); }
Tensor log(const Tensor& a) { return unary_op(ElementwiseOp::log, a); }
Tensor sqrt(const Tensor& a) { return unary_op(ElementwiseOp::sqrt, a); }
Tensor silu(const Tensor& a) { return mul(a, sigmoid(a)); }

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) { return neg(a); }
Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
Tensor operator*(double s, const Tensor& a) { return mul(a, Tensor::scalar(s)); }

// ---------------------------------------------------------------------------
// Reductions

Tensor reduce(ReduceOp op, const Tensor& a, std::size_t axis, bool keep) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.extent == 0) throw ShapeError("empty reduction axis");
  Shape out_shape = a.shape();
  if (keep) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
  }
  auto av = a.data();
  const double count = static_cast<double>(s.extent);
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> argmax;
  if (op == ReduceOp::max) argmax.resize(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      const std::size_t r = o * s.inner + i;
      switch (op) {
        case ReduceOp::sum:
        case ReduceOp::mean: {
          double acc = 0.0;
          for (std::size_t k = 0; k < s.extent; ++k) acc += av[base + k * s.inner];
          out[r] = op == ReduceOp::mean ? acc / count : acc;
          break;
        }
        case ReduceOp::max: {
          std::size_t best = 0;
          for (std::size_t k = 1; k < s.extent; ++k) {
            if (av[base + k * s.inner] > av[base + best * s.inner]) best = k;
          }
          argmax[r] = best;
          out[r] = av[base + best * s.inner];
          break;
        }
        case ReduceOp::variance: {
          double mu = 0.0;
          for (std::size_t k = 0; k < s.extent; ++k) mu += av[base + k * s.inner];
          mu /= count;
          double acc = 0.0;
          for (std::size_t k = 0; k < s.extent; ++k) {
            const double d = av[base + k * s.inner] - mu;
            acc += d * d;
          }
          out[r] = acc / count;
          break;
        }
      }
    }
  }
  return Tensor::from_op(
      std::move(out_shape), std::move(out), {a},
      [op, s, a, argmax = std::move(argmax)](std::span<const double> g, std::span<const std::span<double>> gi) {
        std::span<double> ga = gi[0];
        auto av = a.data();
        const double count = static_cast<double>(s.extent);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            const std::size_t r = o * s.inner + i;
            switch (op) {
              case ReduceOp::sum:
                for (std::size_t k = 0; k < s.extent; ++k) ga[base + k * s.inner] += g[r];
                break;
              case ReduceOp::mean:
                for (std::size_t k = 0; k < s.extent; ++k) ga[base + k * s.inner] += g[r] / count;
                break;
              case ReduceOp::max:
                ga[base + argmax[r] * s.inner] += g[r];
                break;
              case ReduceOp::variance: {
                double mu = 0.0;
                for (std::size_t k = 0; k < s.extent; ++k) mu += av[base + k * s.inner];
                mu /= count;
                for (std::size_t k = 0; k < s.extent; ++k) {
                  ga[base + k * s.inner] += g[r] * 2.0 * (av[base + k * s.inner] - mu) / count;
                }
                break;
              }
            }
          }
        }
      });
}

Tensor sum(const Tensor& a, std::size_t axis, bool keep) { return reduce(ReduceOp::sum, a, axis, keep); }
Tensor mean(const Tensor& a, std::size_t axis, bool keep) { return reduce(ReduceOp::mean, a, axis, keep); }
Tensor max(const Tensor& a, std::size_t axis, bool keep) { return reduce(ReduceOp::max, a, axis, keep); }
Tensor variance(const Tensor& a, std::size_t axis, bool keep) {
  return reduce(ReduceOp::variance, a, axis, keep);
}

Tensor sum_all(const Tensor& a) { return sum(reshape(a, {a.numel()}), 0); }

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) peak = std::max(peak, av[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(av[base + k * s.inner] - peak);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  }
  std::vector<double> y = out;
  return Tensor::from_op(a.shape(), std::move(out), {a},
                         [s, y = std::move(y)](std::span<const double> g, std::span<const std::span<double>> gi) {
                           std::span<double> ga = gi[0];
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             for (std::size_t i = 0; i < s.inner; ++i) {
                               const std::size_t base = o * s.extent * s.inner + i;
                               double dot = 0.0;
                               for (std::size_t k = 0; k < s.extent; ++k) {
                                 dot += g[base + k * s.inner] * y[base + k * s.inner];
                               }
                               for (std::size_t k = 0; k < s.extent; ++k) {
                                 const std::size_t j = base + k * s.inner;
                                 ga[j] += y[j] * (g[j] - dot);
                               }
                             }
                           }
                         });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects rows x classes, got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != rows) throw ShapeError("cross_entropy: label count does not match rows");
  for (std::size_t label : labels) {
    if (label >= classes) throw ShapeError("cross_entropy: label out of range");
  }
  auto z = logits.data();
  std::vector<double> prob(z.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = z.data() + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < classes; ++c) prob[r * classes + c] = std::exp(row[c] - lse);
    loss += lse - row[labels[r]];
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  return Tensor::from_op({1}, {loss}, {logits},
                         [prob = std::move(prob), targets = std::move(targets), classes](
                             std::span<const double> g, std::span<const std::span<double>> gi) {
                           std::span<double> gz = gi[0];
                           const double scale = g[0] / static_cast<double>(targets.size());
                           for (std::size_t r = 0; r < targets.size(); ++r) {
                             for (std::size_t c = 0; c < classes; ++c) {
                               const double onehot = c == targets[r] ? 1.0 : 0.0;
                               gz[r * classes + c] += scale * (prob[r * classes + c] - onehot);
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Map(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return Tensor::from_op({a.dim(0), b.dim(1)}, std::move(out), {a, b},
                         [a, b, m, k, n](std::span<const double> g, std::span<const std::span<double>> gi) {
                           ConstMap gm(g.data(), m, n);
                           if (!gi[0].empty()) {
                             Map(gi[0].data(), m, k).noalias() += gm * ConstMap(b.data().data(), k, n).transpose();
                           }
                           if (!gi[1].empty()) {
                             Map(gi[1].data(), k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * gm;
                           }
                         });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear of input " + shape_str(x.shape()) + " with weight " + shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != w.dim(0))) {
    throw ShapeError("linear bias " + shape_str(bias.shape()) + " for weight " + shape_str(w.shape()));
  }
  const auto rows = static_cast<Eigen::Index>(x.dim(0));
  const auto in = static_cast<Eigen::Index>(x.dim(1));
  const auto out_dim = static_cast<Eigen::Index>(w.dim(0));
  std::vector<double> out(static_cast<std::size_t>(rows * out_dim));
  Map y(out.data(), rows, out_dim);
  y.noalias() = ConstMap(x.data().data(), rows, in) * ConstMap(w.data().data(), out_dim, in).transpose();
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out_dim);
  }
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor::from_op(
      {x.dim(0), w.dim(0)}, std::move(out), std::move(inputs),
      [x, w, rows, in, out_dim, has_bias](std::span<const double> g, std::span<const std::span<double>> gi) {
        ConstMap gm(g.data(), rows, out_dim);
        if (!gi[0].empty()) Map(gi[0].data(), rows, in).noalias() += gm * ConstMap(w.data().data(), out_dim, in);
        if (!gi[1].empty()) {
          Map(gi[1].data(), out_dim, in).noalias() += gm.transpose() * ConstMap(x.data().data(), rows, in);
        }
        if (has_bias && !gi[2].empty()) {
          Eigen::Map<Eigen::RowVectorXd>(gi[2].data(), out_dim) += gm.colwise().sum();
        }
      });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 3) throw ShapeError("conv1d weight must be c_out x c_in x k, got " + shape_str(w.shape()));
  const std::size_t c_out = w.dim(0);
  const std::size_t c_in = w.dim(1);
  const std::size_t k = w.dim(2);
  if (k % 2 == 0) throw ShapeError("conv1d kernel size must be odd, got " + std::to_string(k));
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("conv1d input must be rank 2 or 3");
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t xc = x.dim(batched ? 1 : 0);
  const std::size_t len = x.dim(batched ? 2 : 1);
  if (xc != c_in) {
    throw ShapeError("conv1d input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != c_out)) throw ShapeError("conv1d bias extent mismatch");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  auto xv = x.data();
  auto wv = w.data();
  std::vector<double> out(batch * c_out * len, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < c_out; ++o) {
      double* yrow = out.data() + (b * c_out + o) * len;
      if (has_bias) std::fill(yrow, yrow + len, bias.data()[o]);
      for (std::size_t i = 0; i < c_in; ++i) {
        const double* xrow = xv.data() + (b * c_in + i) * len;
        for (std::size_t t = 0; t < k; ++t) {
          const double wt = wv[(o * c_in + i) * k + t];
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(t) - pad;
          for (std::size_t l = 0; l < len; ++l) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l) + shift;
            if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) yrow[l] += wt * xrow[src];
          }
        }
      }
    }
  }
  Shape out_shape = batched ? Shape{batch, c_out, len} : Shape{c_out, len};
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor::from_op(
      std::move(out_shape), std::move(out), std::move(inputs),
      [x, w, batch, c_in, c_out, k, len, pad, has_bias](std::span<const double> g,
                                                         std::span<const std::span<double>> gi) {
        auto xv = x.data();
        auto wv = w.data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < c_out; ++o) {
            const double* grow = g.data() + (b * c_out + o) * len;
            if (has_bias && !gi[2].empty()) {
              for (std::size_t l = 0; l < len; ++l) gi[2][o] += grow[l];
            }
            for (std::size_t i = 0; i < c_in; ++i) {
              const double* xrow = xv.data() + (b * c_in + i) * len;
              for (std::size_t t = 0; t < k; ++t) {
                const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(t) - pad;
                const std::size_t widx = (o * c_in + i) * k + t;
                double gw = 0.0;
                for (std::size_t l = 0; l < len; ++l) {
                  const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l) + shift;
                  if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                  gw += grow[l] * xrow[src];
                  if (!gi[0].empty()) gi[0][(b * c_in + i) * len + static_cast<std::size_t>(src)] += grow[l] * wv[widx];
                }
                if (!gi[1].empty()) gi[1][widx] += gw;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::from_op(std::move(shape), std::move(out), {a},
                         [](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                         });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_str(a.shape()));
  const auto r = static_cast<Eigen::Index>(a.dim(0));
  const auto c = static_cast<Eigen::Index>(a.dim(1));
  std::vector<double> out(a.numel());
  Map(out.data(), c, r) = ConstMap(a.data().data(), r, c).transpose();
  return Tensor::from_op({a.dim(1), a.dim(0)}, std::move(out), {a},
                         [r, c](std::span<const double> g, std::span<const std::span<double>> gi) {
                           Map(gi[0].data(), r, c) += ConstMap(g.data(), c, r).transpose();
                         });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t d = 0; compatible && d < s.size(); ++d) compatible = d == axis || s[d] == first[d];
    if (!compatible) throw ShapeError("concat of " + shape_str(first) + " and " + shape_str(s));
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit whole = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].data();
    const std::size_t block = extents[p] * whole.inner;
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + o * whole.extent * whole.inner + offset);
    }
    offset += block;
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), parts,
                         [whole, extents](std::span<const double> g, std::span<const std::span<double>> gi) {
                           std::size_t offset = 0;
                           for (std::size_t p = 0; p < extents.size(); ++p) {
                             const std::size_t block = extents[p] * whole.inner;
                             if (!gi[p].empty()) {
                               for (std::size_t o = 0; o < whole.outer; ++o) {
                                 const double* src = g.data() + o * whole.extent * whole.inner + offset;
                                 double* dst = gi[p].data() + o * block;
                                 for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
                               }
                             }
                             offset += block;
                           }
                         });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (length == 0 || start + length > s.extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                     shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  auto av = a.data();
  std::vector<double> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(av.data() + (o * s.extent + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), {a},
                         [s, start, length](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             const double* src = g.data() + o * length * s.inner;
                             double* dst = gi[0].data() + (o * s.extent + start) * s.inner;
                             for (std::size_t j = 0; j < length * s.inner; ++j) dst[j] += src[j];
                           }
                         });
}

Tensor index_select(const Tensor& a, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("index_select with no indices");
  const std::size_t rows = a.dim(0);
  const std::size_t row = a.numel() / rows;
  for (std::size_t i : indices) {
    if (i >= rows) throw ShapeError("index_select index " + std::to_string(i) + " out of range for " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[0] = indices.size();
  auto av = a.data();
  std::vector<double> out(indices.size() * row);
  for (std::size_t r = 0; r < indices.size(); ++r) std::copy_n(av.data() + indices[r] * row, row, out.data() + r * row);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return Tensor::from_op(std::move(out_shape), std::move(out), {a},
                         [idx = std::move(idx), row](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t r = 0; r < idx.size(); ++r) {
                             const double* src = g.data() + r * row;
                             double* dst = gi[0].data() + idx[r] * row;
                             for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
                           }
                         });
}

Tensor flip(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      std::copy_n(av.data() + (o * s.extent + k) * s.inner, s.inner,
                  out.data() + (o * s.extent + (s.extent - 1 - k)) * s.inner);
    }
  }
  return Tensor::from_op(a.shape(), std::move(out), {a},
                         [s](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             for (std::size_t k = 0; k < s.extent; ++k) {
                               const double* src = g.data() + (o * s.extent + (s.extent - 1 - k)) * s.inner;
                               double* dst = gi[0].data() + (o * s.extent + k) * s.inner;
                               for (std::size_t j = 0; j < s.inner; ++j) dst[j] += src[j];
                             }
                           }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t last = x.rank() - 1;
  Tensor centered = x - mean(x, last, true);
  Tensor denom = sqrt(variance(x, last, true) + eps);
  return centered / denom * gamma + beta;
}

}  // namespace hemb
