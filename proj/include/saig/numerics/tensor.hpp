#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "saig/errors.hpp"

namespace saig::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape);

// One vertex of the computation graph. `backward` reads this node's grad and
// accumulates into the grads of `inputs`; it is released after it runs.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
};

namespace detail {
inline bool& no_grad_flag() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

// While alive on this thread, ops record no graph.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::no_grad_flag()) { detail::no_grad_flag() = true; }
  ~NoGradGuard() { detail::no_grad_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor handle. Copies share the underlying node; values of
// non-leaf tensors are never mutated after the producing op returns.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : node_(std::make_shared<Node<T>>()) {
    for (auto extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node<T>>()) {
    for (auto extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                           std::to_string(data.size()) + " values");
    }
    node_->value = std::move(data);
    node_->shape = std::move(shape);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }

  // Direct write access, only legal on leaves (parameters, inputs).
  std::span<T> mutable_data() {
    if (!node_->is_leaf()) throw ContractError("cannot mutate the value of a non-leaf tensor");
    return node_->value;
  }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    if (on && node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), T{0});
    if (!on) node_->grad.clear();
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), T{0});
  }

  // Fresh leaf holding a copy of the values, detached from any graph.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared_node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

// Topologically ordered record of the graph under a scalar root, restricted to
// nodes that participate in differentiation.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  std::span<Node<T>* const> nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

  // Reverse sweep. Leaf grads accumulate; interior closures are released so a
  // second sweep over the same graph raises ContractError.
  void run();

 private:
  std::shared_ptr<Node<T>> root_;
  std::vector<Node<T>*> order_;
};

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  if (!root.defined()) throw ContractError("backward on an undefined tensor");
  Tape tape;
  tape.root_ = root.shared_node();
  if (!root.requires_grad()) return tape;

  // Iterative post-order DFS so deep stacks do not blow the call stack.
  std::unordered_set<Node<T>*> visited{root.node()};
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void Tape<T>::run() {
  if (!root_) throw ContractError("tape has no root");
  if (root_->value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(root_->shape));
  }
  if (root_->consumed) throw ContractError("graph already consumed by a previous backward pass");
  if (order_.empty()) return;
  for (auto* node : order_) {
    if (!node->is_leaf() && node->consumed) {
      throw ContractError(std::string("graph already consumed at op '") + node->op + "'");
    }
    if (node->grad.size() != node->value.size()) node->grad.assign(node->value.size(), T{0});
  }
  root_->grad[0] += T{1};
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>* node = *it;
    if (node->is_leaf()) continue;
    if (node->backward) node->backward(*node);
    node->backward = nullptr;
    node->consumed = true;
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.defined() && loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Tape<T>::record(loss).run();
}

}  // namespace saig::nn
