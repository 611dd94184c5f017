// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_TENSOR_HPP
#define TREEATTN_TENSOR_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "treeattn/error.hpp"

namespace treeattn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
class Tape;

// One value in the computation graph. Leaves (parameters, inputs) carry no
// backward rule; results recorded on a tape hold their parents and a closure
// that pushes `grad` into the parents' buffers.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const Tape<T>* tape = nullptr;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

namespace detail {
inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

/// Dense row-major tensor. Copies share the underlying node; values of a
/// tensor that does not participate in gradients are never mutated by ops.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<T> data) {
    if (shape_size(shape) != data.size()) {
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_string(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->id = detail::next_node_id();
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = shape_size(shape);
    return from_data(std::move(shape), std::vector<T>(n, T(0)));
  }

  static Tensor full(Shape shape, T fill) {
    const std::size_t n = shape_size(shape);
    return from_data(std::move(shape), std::vector<T>(n, fill));
  }

  static Tensor scalar(T v) { return from_data({}, {v}); }

  /// Trainable leaf: participates in gradients on whatever tape is active.
  static Tensor parameter(Shape shape, std::vector<T> data) {
    Tensor t = from_data(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape()));
    return node_->shape[axis];
  }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const T> values() const { return node_->value; }
  const std::vector<T>& vec() const { return node_->value; }

  /// Direct write access for leaves (parameter updates, test fixtures).
  std::span<T> mutable_values() {
    if (node_->tape) throw ContractError("cannot mutate a tensor recorded on a tape");
    return node_->value;
  }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t i, std::size_t j) const { return node_->value.at(i * node_->shape.at(1) + j); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::uint64_t id() const { return node_->id; }

  /// Gradient accumulated into this tensor; zeros if nothing reached it.
  Tensor grad() const {
    if (node_->grad.size() == node_->value.size()) return from_data(shape(), node_->grad);
    return zeros(shape());
  }
  void zero_grad() { node_->grad.clear(); }

  /// Value copy cut off from any graph.
  Tensor detach() const { return from_data(shape(), node_->value); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
using GradMap = std::map<std::uint64_t, Tensor<T>>;

/// Ordered record of the primitive operations evaluated while the tape is
/// active. Recording order is a topological order by construction.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const std::shared_ptr<Node<T>>& node) {
    node->tape = this;
    nodes_.push_back(node);
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate into
  /// the leaves (call zero_grad between steps); the returned map holds the
  /// gradient of every trainable leaf reached from the tape.
  GradMap<T> backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward requires a scalar loss, got " +
                          (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    }
    Node<T>* root = loss.node();
    if (root->tape && root->tape != this) throw ContractError("loss belongs to a different tape");

    for (auto& n : nodes_) n->grad.clear();
    root->grad_buffer()[0] += T(1);

    if (root->tape == this) {
      for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node<T>& n = **it;
        if (n.grad.empty() || !n.backward) continue;
        n.backward(n);
      }
    }

    GradMap<T> out;
    auto collect = [&out](const std::shared_ptr<Node<T>>& p) {
      if (p->requires_grad && p->tape == nullptr && !out.count(p->id)) {
        out.emplace(p->id, Tensor<T>(p).grad());
      }
    };
    if (root->tape == nullptr) collect(loss.node_ptr());
    for (auto& n : nodes_) {
      for (auto& p : n->parents) collect(p);
    }
    return out;
  }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

namespace detail {
template <typename T>
inline thread_local Tape<T>* active_tape = nullptr;
}  // namespace detail

template <typename T>
Tape<T>* active_tape() {
  return detail::active_tape<T>;
}

/// Makes `tape` the recording tape of this thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(detail::active_tape<T>) { detail::active_tape<T> = &tape; }
  ~TapeScope() { detail::active_tape<T> = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording (evaluation passes, finite-difference probes).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape<T>) { detail::active_tape<T> = nullptr; }
  ~NoGradScope() { detail::active_tape<T> = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Builds an op result and, when a tape is active and any input is
/// trainable, records it with `backward` as its gradient rule.
template <typename T, typename Backward>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                      Backward&& backward) {
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(value));
  Tape<T>* tape = active_tape<T>();
  if (!tape) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  Node<T>* node = out.node();
  node->requires_grad = true;
  for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
  node->backward = std::forward<Backward>(backward);
  tape->record(out.node_ptr());
  return out;
}

template <typename T, typename Backward>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      Backward&& backward) {
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(value));
  Tape<T>* tape = active_tape<T>();
  if (!tape) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;
  Node<T>* node = out.node();
  node->requires_grad = true;
  for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
  node->backward = std::forward<Backward>(backward);
  tape->record(out.node_ptr());
  return out;
}

/// Gradient buffer of parent `k`, or nullptr when that parent is not trainable.
template <typename T>
std::vector<T>* parent_grad(Node<T>& self, std::size_t k) {
  Node<T>& p = *self.parents[k];
  if (!p.requires_grad) return nullptr;
  return &p.grad_buffer();
}

}  // namespace treeattn

#endif  // TREEATTN_TENSOR_HPP
