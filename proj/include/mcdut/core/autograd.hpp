#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mcdut/core/error.hpp"
#include "mcdut/core/tensor.hpp"

namespace mcdut {

// Reverse-mode autodiff over a define-by-run tape. Nodes are created in
// topological order (parents strictly before children), so backward only
// needs the creation sequence number, no explicit sort key beyond it.
template <typename T>
class VarNode {
 public:
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool grad_set = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<VarNode>> parents;
  std::function<void(VarNode&)> backprop;

  void accum_grad(const Tensor<T>& g) {
    if (!grad_set) {
      grad = g;
      grad_set = true;
      return;
    }
    require(grad.same_shape(g), ErrorKind::InternalConsistency, "gradient shape mismatch on accumulate");
    T* dst = grad.data();
    const T* src = g.data();
    const int64_t n = grad.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }

  // Writable gradient buffer, zero-initialized on first touch. Lets ops
  // scatter into the gradient without building a temporary.
  Tensor<T>& grad_buffer() {
    if (!grad_set) {
      grad = Tensor<T>::zeros(value.shape());
      grad_set = true;
    }
    return grad;
  }
};

namespace detail {
inline std::atomic<uint64_t>& seq_counter() {
  static std::atomic<uint64_t> counter{0};
  return counter;
}
}  // namespace detail

template <typename T>
class Variable {
 public:
  Variable() = default;

  static Variable constant(Tensor<T> value) {
    Variable v;
    v.node_ = std::make_shared<VarNode<T>>();
    v.node_->value = std::move(value);
    v.node_->seq = detail::seq_counter()++;
    return v;
  }

  static Variable param(Tensor<T> value) {
    Variable v = constant(std::move(value));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->grad_set; }

  const Tensor<T>& grad() const {
    require(node_ && node_->grad_set, ErrorKind::InternalConsistency, "gradient not computed");
    return node_->grad;
  }

  Tensor<T> grad_or_zeros() const {
    if (node_->grad_set) return node_->grad;
    return Tensor<T>::zeros(node_->value.shape());
  }

  void zero_grad() {
    if (!node_) return;
    node_->grad_set = false;
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

  Variable detach() const { return constant(node_->value); }

  std::shared_ptr<VarNode<T>> node() const { return node_; }

  // Identity used to assert parameter disjointness between modules.
  bool same_storage(const Variable& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<VarNode<T>> node_;
};

// Builds an op node. The backprop closure reads node.grad and accumulates
// into the parents it captured. Graph edges are dropped when no parent needs
// gradients, so constant subgraphs are freed eagerly.
template <typename T>
Variable<T> make_node(Tensor<T> value, std::vector<Variable<T>> parents,
                      std::function<void(VarNode<T>&)> backprop) {
  Variable<T> out = Variable<T>::constant(std::move(value));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    auto node = out.node();
    node->requires_grad = true;
    node->backprop = std::move(backprop);
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
  }
  return out;
}

// Backpropagates from a scalar root. Seeds d(root)/d(root) = 1 and visits the
// reachable differentiable subgraph in reverse creation order.
template <typename T>
void backward(const Variable<T>& root) {
  require(root.defined(), ErrorKind::InternalConsistency, "backward on empty variable");
  require(root.value().numel() == 1, ErrorKind::InternalConsistency, "backward root must be scalar");
  require(root.requires_grad(), ErrorKind::InternalConsistency, "backward root does not require gradients");

  std::vector<std::shared_ptr<VarNode<T>>> order;
  std::unordered_set<const VarNode<T>*> seen;
  std::vector<std::shared_ptr<VarNode<T>>> stack{root.node()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });

  root.node()->accum_grad(Tensor<T>::full(root.value().shape(), T(1)));
  for (const auto& n : order) {
    if (n->backprop && n->grad_set) n->backprop(*n);
  }
}

}  // namespace mcdut
