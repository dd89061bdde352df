// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "mmgenre/ops.hpp"

namespace mmgenre {

namespace detail {
/// log(1 + e^z) without overflow.
template <class T>
T softplus(T z) {
  return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}
}  // namespace detail

/// Weighted multi-label binary cross-entropy on logits z with p = σ(z):
///   loss = mean over samples of −(1/C) Σ_c [ w·y_c·log p_c + (1−y_c)·log(1−p_c) ]
/// evaluated as (1/(B·C)) Σ [ w·y·softplus(−z) + (1−y)·softplus(z) ].
template <class T>
Var<T> weighted_bce(const Var<T>& logits, const Tensor<T>& targets, double positive_weight) {
  if (logits.rank() != 2 || logits.shape() != targets.shape())
    throw ShapeError("weighted_bce: logits " + shape_str(logits.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  for (T y : targets.data())
    if (y != T(0) && y != T(1)) throw std::invalid_argument("weighted_bce: targets must be 0 or 1");
  const std::size_t n = logits.size();
  if (n == 0) throw ShapeError("weighted_bce: empty batch");
  const T w = static_cast<T>(positive_weight);
  const T inv_n = T(1) / static_cast<T>(n);
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits.value()[i], y = targets[i];
    total += w * y * detail::softplus(-z) + (T(1) - y) * detail::softplus(z);
  }
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(logits);
  Var<T> loss(Tensor<T>::scalar(total * inv_n), tape != nullptr);
  if (tape) {
    tape->record([logits, targets, loss, w, inv_n, n] {
      if (!loss.has_grad()) return;
      const T g = loss.node().grad[0] * inv_n;
      Tensor<T>& dz = logits.node().grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const T p = ops::sigmoid_scalar(logits.value()[i]), y = targets[i];
        dz[i] += g * (w * y * (p - T(1)) + (T(1) - y) * p);
      }
    });
  }
  return loss;
}

}  // namespace mmgenre
