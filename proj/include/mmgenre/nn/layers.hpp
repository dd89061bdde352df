// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "mmgenre/nn/parameters.hpp"
#include "mmgenre/ops.hpp"

namespace mmgenre::nn {

/// Train/eval switch plus the dropout stream for one forward pass.
struct ForwardMode {
  bool train = false;
  SeededRng* rng = nullptr;

  static ForwardMode eval() { return {}; }
  static ForwardMode training(SeededRng& r) { return {true, &r}; }
};

template <class T>
Var<T> dropout(const Var<T>& x, double rate, const ForwardMode& mode) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!mode.train || rate == 0.0) return x;
  if (!mode.rng) throw std::logic_error("training-mode dropout needs a random stream");
  return ops::dropout(x, rate, true, *mode.rng);
}

template <class T>
struct Linear {
  Var<T> weight;  // Din × Dout
  Var<T> bias;    // Dout; unused when !biased
  bool biased = true;

  static Linear create(ParameterStore<T>& store, const std::string& name, std::size_t din,
                       std::size_t dout, SeededRng& rng, bool with_bias = true) {
    Linear l;
    l.weight = store.add(name + ".weight", init::fan_in_uniform<T>({din, dout}, din, rng));
    if (with_bias) l.bias = store.add(name + ".bias", init::fan_in_uniform<T>({dout}, din, rng));
    l.biased = with_bias;
    return l;
  }

  Var<T> operator()(const Var<T>& x) const {
    if (biased) return ops::linear(x, weight, bias);
    Shape out = x.shape();
    out.back() = out_dim();
    return ops::reshape(ops::matmul(ops::reshape(x, {x.size() / in_dim(), in_dim()}), weight), out);
  }
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

template <class T>
struct LayerNorm {
  Var<T> gain;
  Var<T> bias;
  T eps = T(1e-5);

  static LayerNorm create(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
    LayerNorm n;
    n.gain = store.add(name + ".gain", Tensor<T>({dim}, T(1)));
    n.bias = store.add(name + ".bias", Tensor<T>({dim}, T(0)));
    return n;
  }

  Var<T> operator()(const Var<T>& x) const { return ops::layer_norm(x, gain, bias, eps); }
};

/// Learned positional embeddings: row t is added to time step t.
template <class T>
struct PositionalTable {
  Var<T> table;  // max_length × dim

  static PositionalTable create(ParameterStore<T>& store, const std::string& name,
                                std::size_t max_length, std::size_t dim, SeededRng& rng) {
    return {store.add(name, init::normal<T>({max_length, dim}, 0.02, rng))};
  }

  std::size_t max_length() const { return table.dim(0); }

  /// x: B×T×D with T ≤ max_length.
  Var<T> operator()(const Var<T>& x) const {
    const std::size_t Tn = x.dim(1);
    if (Tn > max_length())
      throw ShapeError("sequence length " + std::to_string(Tn) + " exceeds positional table of " +
                       std::to_string(max_length()));
    if (Tn == 0) return x;
    return ops::add(x, ops::slice(table, 0, 0, Tn));
  }
};

template <class T>
struct MultiHeadSelfAttention {
  Linear<T> query, key, value, out;
  std::size_t heads = 1;

  static MultiHeadSelfAttention create(ParameterStore<T>& store, const std::string& name,
                                       std::size_t dim, std::size_t heads, SeededRng& rng) {
    if (heads == 0 || dim % heads != 0)
      throw ConfigError("model dim " + std::to_string(dim) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    MultiHeadSelfAttention a;
    a.query = Linear<T>::create(store, name + ".query", dim, dim, rng);
    a.key = Linear<T>::create(store, name + ".key", dim, dim, rng, false);
    a.value = Linear<T>::create(store, name + ".value", dim, dim, rng);
    a.out = Linear<T>::create(store, name + ".out", dim, dim, rng);
    a.heads = heads;
    return a;
  }

  /// x: B×T×D; mask: B×T validity flags (empty = all valid).
  Var<T> operator()(const Var<T>& x, const ops::Mask& mask) const {
    return out(ops::attention(query(x), key(x), value(x), mask, heads));
  }
};

/// Post-norm encoder layer:
///   h = LN1(x + Dropout(MHSA(x)))
///   y = LN2(h + Dropout(W2 · Dropout(ReLU(W1 · h))))
/// with a feed-forward hidden width of 4·D.
template <class T>
struct EncoderLayer {
  MultiHeadSelfAttention<T> attention;
  LayerNorm<T> norm1, norm2;
  Linear<T> ff1, ff2;
  double dropout_rate = 0.0;

  static EncoderLayer create(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                             std::size_t heads, double dropout_rate, SeededRng& rng) {
    EncoderLayer l;
    l.attention = MultiHeadSelfAttention<T>::create(store, name + ".attn", dim, heads, rng);
    l.norm1 = LayerNorm<T>::create(store, name + ".norm1", dim);
    l.ff1 = Linear<T>::create(store, name + ".ff1", dim, 4 * dim, rng);
    l.ff2 = Linear<T>::create(store, name + ".ff2", 4 * dim, dim, rng);
    l.norm2 = LayerNorm<T>::create(store, name + ".norm2", dim);
    l.dropout_rate = dropout_rate;
    return l;
  }

  Var<T> operator()(const Var<T>& x, const ops::Mask& mask, const ForwardMode& mode) const {
    Var<T> a = dropout(attention(x, mask), dropout_rate, mode);
    Var<T> h = norm1(ops::add(x, a));
    Var<T> f = dropout(ops::relu(ff1(h)), dropout_rate, mode);
    f = dropout(ff2(f), dropout_rate, mode);
    return norm2(ops::add(h, f));
  }
};

template <class T>
struct Encoder {
  std::vector<EncoderLayer<T>> layers;

  static Encoder create(ParameterStore<T>& store, const std::string& name, std::size_t count,
                        std::size_t dim, std::size_t heads, double dropout_rate, SeededRng& rng) {
    Encoder e;
    for (std::size_t i = 0; i < count; ++i)
      e.layers.push_back(EncoderLayer<T>::create(store, name + ".layer" + std::to_string(i), dim,
                                                 heads, dropout_rate, rng));
    return e;
  }

  Var<T> operator()(Var<T> x, const ops::Mask& mask, const ForwardMode& mode) const {
    for (const auto& l : layers) x = l(x, mask, mode);
    return x;
  }
};

}  // namespace mmgenre::nn
