#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "stylegs/errors.hpp"

namespace stylegs {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// When enabled, every recorded operation verifies that its output is finite
/// and throws NumericError naming the op otherwise. Off by default.
void set_check_finite(bool enabled);
bool check_finite_enabled();

/// One vertex of the differentiation graph. Owned through shared_ptr by the
/// tensors that refer to it and by the nodes that consume it.
template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  std::string op;
  Shape shape;
  Array data;
  Array grad;  // empty until something flows into it
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }

  Array& grad_buffer() {
    if (grad.size() != data.size()) grad = Array::Zero(data.size());
    return grad;
  }
};

/// Dense row-major n-d array taking part in reverse-mode differentiation.
/// Copies share the underlying node; use clone() for a detached deep copy.
template <typename Scalar>
class Tensor {
 public:
  using NodeT = Node<Scalar>;
  using Array = typename NodeT::Array;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}
  Tensor(Shape shape, Array data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t ndim() const { return node_->shape.size(); }
  Index size() const { return node_->data.size(); }

  const Array& data() const { return node_->data; }
  /// Mutable access to the values. Meant for leaves (optimizer updates,
  /// finite-difference probes); editing an interior node does not re-run
  /// anything downstream.
  Array& mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  Array grad() const;
  void zero_grad() { node_->grad.resize(0); }

  Scalar item() const;
  Scalar operator[](Index i) const { return node_->data[i]; }

  /// Detached deep copy of the values (no history, no grad).
  Tensor clone(bool requires_grad = false) const;

  /// Reverse sweep from this scalar. Leaf gradients accumulate across calls;
  /// interior gradients are reset at the start of each sweep.
  void backward() const;

  const std::shared_ptr<NodeT>& node() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

/// Topologically ordered record of the operations reachable from a root.
template <typename Scalar>
class Tape {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  static Tape record(const Tensor<Scalar>& root);

  /// Inputs precede consumers; each node appears once.
  const std::vector<NodePtr>& nodes() const { return order_; }
  void backward();

 private:
  std::vector<NodePtr> order_;
};

namespace detail {

std::uint64_t next_sequence();
void throw_if_nonfinite(const std::string& op, const float* data, Index n);
void throw_if_nonfinite(const std::string& op, const double* data, Index n);

/// Records an op result. The backward closure is kept only if some input
/// requires a gradient; otherwise the result is a constant.
template <typename Scalar>
Tensor<Scalar> make_result(std::string op, Shape shape,
                           typename Node<Scalar>::Array data,
                           std::vector<Tensor<Scalar>> inputs,
                           std::function<void(Node<Scalar>&)> backward_fn) {
  auto node = std::make_shared<Node<Scalar>>();
  if (check_finite_enabled()) throw_if_nonfinite(op, data.data(), data.size());
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->sequence = next_sequence();
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<Scalar>(std::move(node));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Inline definitions

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor", "data length " + std::to_string(data.size()) +
                                   " does not match shape " + to_string(shape));
  }
  node_ = std::make_shared<NodeT>();
  node_->op = "leaf";
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  node_->sequence = detail::next_sequence();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Array::Zero(n), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return Tensor(Shape{1}, Array::Constant(1, value), requires_grad);
}

template <typename Scalar>
typename Tensor<Scalar>::Array Tensor<Scalar>::grad() const {
  if (has_grad()) return node_->grad;
  return Array::Zero(node_->data.size());
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item", "tensor has " + std::to_string(size()) + " elements");
  return node_->data[0];
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone(bool requires_grad) const {
  return Tensor(node_->shape, node_->data, requires_grad);
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (!defined() || size() != 1) {
    throw ShapeError("backward", "root must have exactly one element, got shape " +
                                     (defined() ? to_string(shape()) : std::string("<undefined>")));
  }
  Tape<Scalar>::record(*this).backward();
}

template <typename Scalar>
Tape<Scalar> Tape<Scalar>::record(const Tensor<Scalar>& root) {
  Tape tape;
  if (!root.defined()) return tape;
  // Iterative post-order DFS; visited set guarantees single visits.
  std::unordered_set<const Node<Scalar>*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const NodePtr child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename Scalar>
void Tape<Scalar>::backward() {
  if (order_.empty()) return;
  for (auto& node : order_) {
    if (!node->is_leaf()) node->grad.resize(0);
  }
  auto& root = order_.back();
  root->grad_buffer() += Scalar(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto& node = **it;
    if (node.backward_fn && node.grad.size() == node.data.size()) node.backward_fn(node);
  }
}

}  // namespace stylegs
