#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "freqformer/error.hpp"
#include "freqformer/rng.hpp"
#include "freqformer/shape.hpp"

namespace fqf {

namespace detail {

/// One vertex of the autodiff graph. Values are immutable once the node is
/// built; only the grad buffer (and parameter data, via the optimizer) change.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents'. Empty for leaves.
  std::function<void(const std::vector<T>&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::atomic<bool>& debug_mode() {
  static std::atomic<bool> enabled{false};
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph construction for the guard's lifetime (inference, data prep,
/// finite-difference probes).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// When on, convolution inputs are scanned for non-finite values.
inline void set_debug_checks(bool on) { detail::debug_mode() = on; }
inline bool debug_checks() { return detail::debug_mode(); }

/// Dense row-major tensor of rank <= 4 with an optional autodiff graph.
///
/// Copies are shallow: two Tensor handles may refer to the same node, which is
/// how parameters are shared between a model and its optimizer.
template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor element type must be float or double");

 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<NodeT>()) {
    node_->shape = shape;
    node_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<NodeT>()) {
    if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
      throw ShapeError("tensor", "shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                                     " values, got " + std::to_string(values.size()));
    }
    node_->shape = shape;
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
  static Tensor ones(Shape shape) { return Tensor(shape, T(1)); }
  static Tensor full(Shape shape, T v) { return Tensor(shape, v); }
  static Tensor scalar(T v) { return Tensor(Shape{}, v); }

  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    Tensor t(shape);
    for (auto& v : t.node_->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    Tensor t(shape);
    for (auto& v : t.node_->data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  static Tensor from_node(std::shared_ptr<NodeT> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  int rank() const { return node_->shape.rank(); }
  std::int64_t dim(int axis) const { return node_->shape[axis]; }
  std::int64_t numel() const { return node_->shape.numel(); }

  std::span<const T> data() const { return node_->data; }

  /// Direct write access. Meant for leaves (parameter init, optimizer updates);
  /// mutating a tensor that already feeds a recorded graph invalidates that graph.
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item", "tensor of shape " + shape().str() + " is not a scalar");
    return node_->data[0];
  }

  /// Element at a full multi-index.
  T at(std::initializer_list<std::int64_t> index) const { return node_->data[offset(index)]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool is_leaf() const { return !node_->backward; }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }

  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Value copy without graph attachment.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return Tensor<U>(shape(), std::move(out));
  }

  /// Reverse-mode sweep from this scalar; see fqf::backward.
  void backward() const;

  const std::shared_ptr<NodeT>& node() const { return node_; }

 private:
  std::size_t offset(std::initializer_list<std::int64_t> index) const {
    const Shape& s = shape();
    if (static_cast<int>(index.size()) != s.rank()) {
      throw ShapeError("at", "index rank " + std::to_string(index.size()) + " for shape " + s.str());
    }
    std::int64_t off = 0;
    int axis = 0;
    for (auto i : index) {
      if (i < 0 || i >= s[axis]) throw ShapeError("at", "index out of range on axis " + std::to_string(axis));
      off = off * s[axis] + i;
      ++axis;
    }
    return static_cast<std::size_t>(off);
  }

  std::shared_ptr<NodeT> node_;
};

/// Populates grad on every reachable tensor that requires it.
///
/// Leaf grads accumulate across calls (call zero_grad between steps);
/// intermediate grads are rebuilt on every sweep, so calling twice on the same
/// graph doubles the leaf grads exactly.
template <class T>
void backward(const Tensor<T>& root) {
  using NodeT = detail::Node<T>;
  if (!root.defined() || root.numel() != 1) {
    throw ShapeError("backward", "root must be a scalar, got shape " + (root.defined() ? root.shape().str() : "<undefined>"));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* n : order) {
    if (n->backward) n->grad.assign(n->data.size(), T(0));
  }
  root.node()->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward) {
      n->backward(n->grad);
      std::vector<T>().swap(n->grad);
    }
  }
}

template <class T>
void Tensor<T>::backward() const {
  fqf::backward(*this);
}

/// True when every element is finite.
template <class T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace fqf
