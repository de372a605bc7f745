#include "hemb/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "hemb/errors.hpp"

namespace hemb {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  Tensor::BackwardFn backward;
  bool consumed = false;

  bool leaf() const { return inputs.empty(); }
};

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;
std::atomic<bool> g_checked{true};
std::atomic<testing::Fault> g_fault{testing::Fault::none};

void check_shape(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
  }
}

void check_finite(std::span<const double> values, const char* where) {
  if (!g_checked.load(std::memory_order_relaxed)) return;
  // Exponent bits all set means Inf or NaN; the branch-free form vectorizes.
  constexpr std::uint64_t kExponent = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExponent) == kExponent);
  if (bad) throw NumericError(std::string("non-finite value produced by ") + where);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

void set_checked_mode(bool on) { g_checked.store(on); }
bool checked_mode() { return g_checked.load(); }

namespace testing {
void inject_fault(Fault fault) { g_fault.store(fault); }
Fault active_fault() { return g_fault.load(std::memory_order_relaxed); }
}  // namespace testing

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape.empty()) throw ShapeError("tensors need rank >= 1");
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  check_finite(values, "tensor construction");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::ones(const Shape& shape, bool requires_grad) { return full(shape, 1.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return Tensor({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<double> values;
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values), requires_grad);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       BackwardFn backward) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("op result shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  check_finite(values, "tensor operation");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  const bool record = t_grad_enabled && backward &&
                      std::any_of(inputs.begin(), inputs.end(),
                                  [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (record) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& input : inputs) node->inputs.push_back(input.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const detail::Node& Tensor::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node().values.size(); }
std::span<const double> Tensor::data() const { return node().values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node().values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node().values[flat];
}

bool Tensor::requires_grad() const { return node().requires_grad; }
bool Tensor::is_leaf() const { return node().leaf(); }
bool Tensor::has_grad() const { return !node().grad.empty(); }
std::span<const double> Tensor::grad() const { return node().grad; }

void Tensor::zero_grad() {
  node();
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::span<double> Tensor::leaf_data() {
  if (!node().leaf()) throw ContractError("leaf_data() on an operation result");
  return node_->values;
}

Tensor Tensor::detach() const {
  const detail::Node& n = node();
  auto copy = std::make_shared<detail::Node>();
  copy->shape = n.shape;
  copy->values = n.values;
  return Tensor(std::move(copy));
}

void Tensor::backward() const {
  detail::Node& root = const_cast<detail::Node&>(node());
  if (root.values.size() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw ContractError("backward() on a root that is detached from the tape");
  if (root.consumed) throw ContractError("backward() already ran on this root");

  // Post-order DFS gives inputs before consumers; reversed, it is the tape.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [current, next] = stack.back();
    if (next < current->inputs.size()) {
      detail::Node* child = current->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(current);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (n->leaf()) {
      if (n->grad.size() != n->values.size()) n->grad.assign(n->values.size(), 0.0);
    } else {
      n->grad.assign(n->values.size(), 0.0);
    }
  }
  root.grad[0] += 1.0;

  std::vector<std::span<double>> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->leaf() || !n->backward) continue;
    slots.clear();
    for (const auto& input : n->inputs) {
      if (input->requires_grad) {
        slots.emplace_back(input->grad);
      } else {
        slots.emplace_back();
      }
    }
    n->backward(n->grad, slots);
  }
  for (detail::Node* n : order) {
    if (!n->leaf()) std::vector<double>().swap(n->grad);
  }
  root.consumed = true;
}

}  // namespace hemb
