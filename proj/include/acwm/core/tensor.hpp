// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "acwm/core/error.hpp"

namespace acwm {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Reverse-mode differentiable tensor. Row-major, value semantics on the
/// handle (copies share the same node), single-threaded graph.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values) { return leaf(std::move(shape), std::move(values), false); }
  static Tensor parameter(Shape shape, std::vector<T> values) { return leaf(std::move(shape), std::move(values), true); }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = static_cast<std::size_t>(acwm::numel(shape));
    return leaf(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor scalar(T v) { return constant({}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  T item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  /// Gradient accumulated by the last backward(); zeros if never reached.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T(0));
    return node_->grad;
  }

  const NodePtr& node() const { return node_; }

  /// Seeds d(this)/d(this) = 1 (scalar) and propagates to every leaf.
  void backward() const {
    if (node_->value.size() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
    backward_with(std::vector<T>{T(1)});
  }

  /// Vector-Jacobian product with an explicit output cotangent.
  void backward_with(const std::vector<T>& seed) const {
    if (seed.size() != node_->value.size()) throw ShapeError("backward seed size mismatch");
    auto order = topo_order();
    for (auto* n : order) n->grad.clear();
    node_->ensure_grad() = seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && n->requires_grad && !n->grad.empty()) n->backward(*n);
    }
  }

 private:
  static Tensor leaf(Shape shape, std::vector<T> values, bool requires_grad) {
    if (acwm::numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  // Post-order over the graph reachable from this node (inputs before users).
  std::vector<Node<T>*> topo_order() const {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        Node<T>* child = n->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  NodePtr node_;
};

/// Builds the result node of an op. When no input requires a gradient the
/// inputs and backward closure are dropped so inference graphs stay flat.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in->requires_grad;
  n->requires_grad = any;
  if (any) {
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

}  // namespace acwm
