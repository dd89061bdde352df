// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mmgenre/nn/parameters.hpp"

namespace mmgenre::nn {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every registered parameter:
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
///   p ← p − lr · m̂ / (sqrt(v̂) + eps),  m̂ = m/(1−β1^t), v̂ = v/(1−β2^t)
template <class T>
void adam_step(ParameterStore<T>& store, std::span<const Tensor<T>> grads, const AdamConfig& cfg) {
  auto& entries = store.entries();
  if (grads.size() != entries.size())
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(entries.size()) + " parameters");
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (grads[i].shape() != entries[i].param.shape())
      throw std::invalid_argument("adam_step: missing or misshaped gradient for " + entries[i].name);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    e.step += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.step));
    Tensor<T>& p = e.param.mutable_value();
    const Tensor<T>& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double m = cfg.beta1 * e.first_moment[j] + (1.0 - cfg.beta1) * gj;
      const double v = cfg.beta2 * e.second_moment[j] + (1.0 - cfg.beta2) * gj * gj;
      e.first_moment[j] = static_cast<T>(m);
      e.second_moment[j] = static_cast<T>(v);
      const double update = cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
    }
  }
}

template <class T>
double global_norm(std::span<const Tensor<T>> grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

/// Rescales all gradients by max_norm/‖g‖ when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
template <class T>
double clip_global_norm(std::span<Tensor<T>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(std::span<const Tensor<T>>(grads.data(), grads.size()));
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads)
      for (T& v : g.data()) v = static_cast<T>(static_cast<double>(v) * factor);
  }
  return norm;
}

}  // namespace mmgenre::nn
