#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hemb {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

/**
 * Dense row-major double tensor with an optional reverse-mode tape node.
 *
 * A Tensor is a cheap handle; copies share the same node. Values are never
 * mutated once a tensor participates in a graph. The one exception is
 * leaf_data(), which the optimizer uses to update parameters between steps.
 *
 * The tape is implicit: every op-produced tensor keeps its inputs alive and
 * backward() linearizes the reachable graph into topological order.
 */
class Tensor {
 public:
  /// Receives the output gradient and one accumulator per input. An input
  /// that needs no gradient gets an empty span.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor ones(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  /// Records a custom operation. `backward` may be empty when no input needs
  /// a gradient; the result then carries no tape node.
  static Tensor from_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                        BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// The only value of a single-element tensor.
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient accumulator; empty when nothing was accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();

  /// Mutable view of a leaf's values. Throws ContractError on op results.
  std::span<double> leaf_data();

  /// Back-propagates from this scalar. Leaves accumulate d(this)/d(leaf).
  /// A second call on the same root is rejected.
  void backward() const;

  /// Same values, no tape connection.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const detail::Node& node() const;

  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording for its lifetime (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Checked mode rejects NaN/Inf at construction and division by exact zero.
void set_checked_mode(bool on);
bool checked_mode();

namespace testing {
/// Deliberately corrupts one backward rule so gradient checks can be shown to
/// catch it. Never enabled outside of negative-control tests.
enum class Fault { none, sigmoid_backward };
void inject_fault(Fault fault);
Fault active_fault();
}  // namespace testing

// ---------------------------------------------------------------------------
// Operations

enum class ElementwiseOp { add, sub, mul, div, exp, neg, sigmoid, softplus, relu, log, sqrt };
enum class ReduceOp { sum, mean, max, variance };

/// Unary ops ignore `b`; binary ops broadcast right-aligned extent-1 axes.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b = Tensor());

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
/// x * sigmoid(x)
Tensor silu(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double s);
Tensor operator*(const Tensor& a, double s);
Tensor operator*(double s, const Tensor& a);

/// Reduces one axis; `keep` leaves it in place with extent 1.
/// Variance is the biased (divide-by-count) estimator.
Tensor reduce(ReduceOp op, const Tensor& a, std::size_t axis, bool keep = false);
Tensor sum(const Tensor& a, std::size_t axis, bool keep = false);
Tensor mean(const Tensor& a, std::size_t axis, bool keep = false);
Tensor max(const Tensor& a, std::size_t axis, bool keep = false);
Tensor variance(const Tensor& a, std::size_t axis, bool keep = false);
/// Sum of every element, shape {1}.
Tensor sum_all(const Tensor& a);

Tensor softmax(const Tensor& a, std::size_t axis);

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits` (rows x classes). Shape {1}.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x (rows x in) times w^T (w: out x in) plus optional bias (out).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

/// 1-D cross-correlation along the last axis, zero padded to keep length.
/// x: (c_in x L) or (B x c_in x L); w: (c_out x c_in x k) with k odd.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

Tensor reshape(const Tensor& a, Shape shape);
/// Swaps the two axes of a rank-2 tensor.
Tensor transpose(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
/// Gathers entries along axis 0; indices may repeat.
Tensor index_select(const Tensor& a, std::span<const std::size_t> indices);
/// Reverses the order along `axis`.
Tensor flip(const Tensor& a, std::size_t axis);

/// Layer normalization over the last axis with learned scale and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace hemb
