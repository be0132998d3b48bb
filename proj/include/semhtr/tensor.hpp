// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with tape-free reverse-mode differentiation. Every
// op result keeps shared ownership of its inputs plus a backward closure;
// calling backward() on a scalar walks the graph in reverse topological order.
#pragma once

#include <algorithm>
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

#include <Eigen/Dense>

#include "semhtr/errors.hpp"

namespace semhtr {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         [](std::int64_t a, int b) { return a * b; });
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

/// Disables graph construction for the lifetime of the guard (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return from(shape, std::vector<T>(static_cast<std::size_t>(numel(shape)), T(0)), requires_grad);
  }

  static Tensor filled(const Shape& shape, T v) {
    return from(shape, std::vector<T>(static_cast<std::size_t>(numel(shape)), v));
  }

  static Tensor from(const Shape& shape, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
      throw ShapeError("tensor of shape " + to_string(shape) + " needs " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = shape;
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i < 0 ? i + rank() : i)); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  std::vector<T>& values() & { return node_->value; }
  const std::vector<T>& values() const& { return node_->value; }
  // A temporary tensor may own the last reference to its node.
  std::vector<T> values() && { return node_->value; }
  T item() const { return node_->value.at(0); }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Empty until a backward pass reaches this tensor.
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Copy of the values without graph history.
  Tensor detach() const { return from(shape(), node_->value); }

  void backward() const {
    if (size() != 1) throw ShapeError("backward() requires a scalar, got " + to_string(shape()));
    node_->ensure_grad();
    node_->grad[0] += T(1);
    run_backward();
  }

 private:
  void run_backward() const {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        Node<T>* child = n->inputs[next++].get();
        if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
  }

  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result; records inputs and the backward closure only when
/// gradients are enabled and at least one input needs them.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

/// Gradient buffer of input `i` of a node, or nullptr when it needs none.
template <typename T>
T* input_grad(Node<T>& self, std::size_t i) {
  if (!self.inputs[i]) return nullptr;
  auto& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected " + to_string(expected) + ", got " +
                     to_string(t.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

}  // namespace semhtr
