// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmgenre/autograd.hpp"
#include "mmgenre/rng.hpp"

namespace mmgenre::nn {

/// Named trainable tensors in registration order, with Adam state.
template <class T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Var<T> param;
    Tensor<T> first_moment;
    Tensor<T> second_moment;
    std::uint64_t step = 0;
  };

  Var<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    Entry e;
    e.name = name;
    e.first_moment = Tensor<T>(init.shape());
    e.second_moment = Tensor<T>(init.shape());
    e.param = Var<T>(std::move(init), true);
    entries_.push_back(std::move(e));
    return entries_.back().param;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].param;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t total_parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.param.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.param.zero_grad();
  }

  /// Current gradients in registration order; zeros where none arrived.
  std::vector<Tensor<T>> gradients() const {
    std::vector<Tensor<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.param.grad());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

/// Uniform in ±1/sqrt(fan_in).
template <class T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, SeededRng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
Tensor<T> normal(Shape shape, double stddev, SeededRng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace init

}  // namespace mmgenre::nn
