// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mmgenre/error.hpp"
#include "mmgenre/tensor.hpp"

namespace mmgenre {

template <class T>
struct VarData {
  Tensor<T> value;
  Tensor<T> grad;  // empty until a gradient first reaches this node
  bool requires_grad = false;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape())
      grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a tensor that may take part in differentiation. Copies share
/// the same node.
template <class T>
class Var {
 public:
  Var() : node_(std::make_shared<VarData<T>>()) {}
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<VarData<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t rank() const { return node_->value.rank(); }
  std::size_t size() const { return node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  /// Gradient, or zeros if none has arrived.
  Tensor<T> grad() const {
    return has_grad() ? node_->grad : Tensor<T>(node_->value.shape());
  }
  void zero_grad() { node_->grad = Tensor<T>(); }

  VarData<T>& node() const { return *node_; }
  const std::shared_ptr<VarData<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<VarData<T>> node_;
};

/// Ordered record of differentiable operations.
///
/// Operations record a backward closure here when a tape is active on the
/// calling thread (see TapeScope) and at least one input requires a
/// gradient. backward() runs the closures in exact reverse recording order;
/// every closure adds into its inputs' gradient buffers, so a tensor with
/// several consumers sums their contributions in reverse recording order.
/// The tape is cleared by backward(); record a fresh forward pass before
/// the next call.
template <class T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  void backward(const Var<T>& loss) {
    if (loss.size() != 1)
      throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw std::logic_error("backward() on a loss that was not produced on the tape");
    loss.node().grad_buffer()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

  static Tape*& current() {
    thread_local Tape* active = nullptr;
    return active;
  }

 private:
  std::vector<std::function<void()>> ops_;
};

/// Activates a tape for the current thread for the lifetime of the scope.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::current()) { Tape<T>::current() = &tape; }
  ~TapeScope() { Tape<T>::current() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

namespace detail {

template <class T, class... Vs>
Tape<T>* recording_tape(const Vs&... inputs) {
  Tape<T>* tape = Tape<T>::current();
  if (!tape) return nullptr;
  return (inputs.requires_grad() || ...) ? tape : nullptr;
}

}  // namespace detail

}  // namespace mmgenre
