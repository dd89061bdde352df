// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable tensor operations. Each op computes its forward value and,
// when a tape is recording and an input requires a gradient, records a
// closure that adds the op's vector-Jacobian product into the inputs'
// gradient buffers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mmgenre/autograd.hpp"
#include "mmgenre/kernels.hpp"
#include "mmgenre/rng.hpp"
#include "mmgenre/tensor.hpp"

namespace mmgenre::ops {

/// Per-position validity flags, row-major B×T; 1 = real element, 0 = pad.
/// An empty mask means every position is valid.
using Mask = std::vector<std::uint8_t>;

namespace detail {

template <class T>
Var<T> output(Tensor<T> value, Tape<T>* tape) {
  return Var<T>(std::move(value), tape != nullptr);
}

inline std::size_t leading(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
  return n;
}

inline bool valid(const Mask& mask, std::size_t idx) { return mask.empty() || mask[idx] != 0; }

}  // namespace detail

template <class T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K)
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor<T> out({M, N});
  kernels::gemm_nn(M, N, K, a.value().ptr(), b.value().ptr(), out.ptr(), false);
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(a, b);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([a, b, y, M, N, K] {
      if (!y.has_grad()) return;
      const T* dy = y.node().grad.ptr();
      if (a.requires_grad())
        kernels::gemm_nt(M, K, N, dy, b.value().ptr(), a.node().grad_buffer().ptr(), true);
      if (b.requires_grad())
        kernels::gemm_tn(K, N, M, a.value().ptr(), dy, b.node().grad_buffer().ptr(), true);
    });
  }
  return y;
}

/// x[..., Din] · W[Din, Dout] + bias[Dout].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (weight.rank() != 2 || bias.rank() != 1 || x.rank() < 1)
    throw ShapeError("linear: bad operand ranks");
  const std::size_t Din = weight.dim(0), Dout = weight.dim(1);
  if (x.shape().back() != Din || bias.dim(0) != Dout)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  const std::size_t M = detail::leading(x.shape());
  Shape out_shape = x.shape();
  out_shape.back() = Dout;
  Tensor<T> out(out_shape);
  if (M > 0) {
    kernels::gemm_nn(M, Dout, Din, x.value().ptr(), weight.value().ptr(), out.ptr(), false);
    const T* b = bias.value().ptr();
    for (std::size_t i = 0; i < M; ++i) {
      T* row = out.ptr() + i * Dout;
      for (std::size_t j = 0; j < Dout; ++j) row[j] += b[j];
    }
  }
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(x, weight, bias);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape && M > 0) {
    tape->record([x, weight, bias, y, M, Din, Dout] {
      if (!y.has_grad()) return;
      const T* dy = y.node().grad.ptr();
      if (x.requires_grad())
        kernels::gemm_nt(M, Din, Dout, dy, weight.value().ptr(), x.node().grad_buffer().ptr(),
                         true);
      if (weight.requires_grad())
        kernels::gemm_tn(Din, Dout, M, x.value().ptr(), dy, weight.node().grad_buffer().ptr(),
                         true);
      if (bias.requires_grad()) {
        T* db = bias.node().grad_buffer().ptr();
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < Dout; ++j) db[j] += dy[i * Dout + j];
      }
    });
  }
  return y;
}

/// a + b, where b has the shape of a or of a trailing part of a's shape
/// (b is then broadcast over a's leading dimensions).
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
    throw ShapeError("add: cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  const std::size_t n = a.size(), m = b.size();
  Tensor<T> out = a.value();
  if (m > 0)
    for (std::size_t i = 0; i < n; ++i) out[i] += b.value()[i % m];
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(a, b);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([a, b, y, n, m] {
      if (!y.has_grad()) return;
      const Tensor<T>& dy = y.node().grad;
      if (a.requires_grad()) {
        Tensor<T>& da = a.node().grad_buffer();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (b.requires_grad() && m > 0) {
        Tensor<T>& db = b.node().grad_buffer();
        for (std::size_t i = 0; i < n; ++i) db[i % m] += dy[i];
      }
    });
  }
  return y;
}

/// Elementwise product of equally shaped tensors.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.size();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(a, b);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([a, b, y, n] {
      if (!y.has_grad()) return;
      const Tensor<T>& dy = y.node().grad;
      if (a.requires_grad()) {
        Tensor<T>& da = a.node().grad_buffer();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * b.value()[i];
      }
      if (b.requires_grad()) {
        Tensor<T>& db = b.node().grad_buffer();
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * a.value()[i];
      }
    });
  }
  return y;
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  const std::size_t n = a.size();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] * factor;
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(a);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([a, y, n, factor] {
      if (!y.has_grad()) return;
      Tensor<T>& da = a.node().grad_buffer();
      for (std::size_t i = 0; i < n; ++i) da[i] += y.node().grad[i] * factor;
    });
  }
  return y;
}

template <class T>
Var<T> relu(const Var<T>& a) {
  const std::size_t n = a.size();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] < T(0) ? T(0) : a.value()[i];  // NaN passes through
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(a);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([a, y, n] {
      if (!y.has_grad()) return;
      Tensor<T>& da = a.node().grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        if (a.value()[i] > T(0)) da[i] += y.node().grad[i];
    });
  }
  return y;
}

template <class T>
T sigmoid_scalar(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  const std::size_t n = a.size();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid_scalar(a.value()[i]);
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(a);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([a, y, n] {
      if (!y.has_grad()) return;
      Tensor<T>& da = a.node().grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const T s = y.value()[i];
        da[i] += y.node().grad[i] * s * (T(1) - s);
      }
    });
  }
  return y;
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T total = T(0);
  for (T v : a.value().data()) total += v;
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(a);
  Var<T> y = detail::output(Tensor<T>::scalar(total), tape);
  if (tape) {
    tape->record([a, y] {
      if (!y.has_grad()) return;
      const T g = y.node().grad[0];
      Tensor<T>& da = a.node().grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
    });
  }
  return y;
}

template <class T>
Var<T> mean(const Var<T>& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(a);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([a, y] {
      if (!y.has_grad()) return;
      Tensor<T>& da = a.node().grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += y.node().grad[i];
    });
  }
  return y;
}

/// Softmax over the last dimension, with max subtraction.
template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  if (x.rank() < 1 || x.shape().back() == 0) throw ShapeError("softmax_rows: empty rows");
  const std::size_t N = x.shape().back(), M = x.size() / N;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < M; ++r) {
    const T* in = x.value().ptr() + r * N;
    T* o = out.ptr() + r * N;
    const T mx = *std::max_element(in, in + N);
    T z = T(0);
    for (std::size_t j = 0; j < N; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < N; ++j) o[j] /= z;
  }
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(x);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([x, y, M, N] {
      if (!y.has_grad()) return;
      Tensor<T>& dx = x.node().grad_buffer();
      for (std::size_t r = 0; r < M; ++r) {
        const T* p = y.value().ptr() + r * N;
        const T* g = y.node().grad.ptr() + r * N;
        T dot = T(0);
        for (std::size_t j = 0; j < N; ++j) dot += p[j] * g[j];
        for (std::size_t j = 0; j < N; ++j) dx[r * N + j] += p[j] * (g[j] - dot);
      }
    });
  }
  return y;
}

/// Normalizes each vector along the last dimension to zero mean and unit
/// (biased) variance, then applies gain and bias.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  if (x.rank() < 1 || x.shape().back() == 0) throw ShapeError("layer_norm: D must be >= 1");
  const std::size_t D = x.shape().back(), M = x.size() / D;
  if (gain.size() != D || bias.size() != D)
    throw ShapeError("layer_norm: gain/bias length must equal " + std::to_string(D));
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.size()), inv_std(M);
  for (std::size_t r = 0; r < M; ++r) {
    const T* in = x.value().ptr() + r * D;
    T mu = T(0);
    for (std::size_t j = 0; j < D; ++j) mu += in[j];
    mu /= static_cast<T>(D);
    T var = T(0);
    for (std::size_t j = 0; j < D; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(D);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < D; ++j) {
      const T h = (in[j] - mu) * is;
      xhat[r * D + j] = h;
      out[r * D + j] = h * gain.value()[j] + bias.value()[j];
    }
  }
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(x, gain, bias);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([x, gain, bias, y, xhat = std::move(xhat), inv_std = std::move(inv_std), M, D] {
      if (!y.has_grad()) return;
      const Tensor<T>& dy = y.node().grad;
      if (gain.requires_grad() || bias.requires_grad()) {
        for (std::size_t r = 0; r < M; ++r)
          for (std::size_t j = 0; j < D; ++j) {
            if (gain.requires_grad()) gain.node().grad_buffer()[j] += dy[r * D + j] * xhat[r * D + j];
            if (bias.requires_grad()) bias.node().grad_buffer()[j] += dy[r * D + j];
          }
      }
      if (!x.requires_grad()) return;
      Tensor<T>& dx = x.node().grad_buffer();
      for (std::size_t r = 0; r < M; ++r) {
        T s1 = T(0), s2 = T(0);
        for (std::size_t j = 0; j < D; ++j) {
          const T g = dy[r * D + j] * gain.value()[j];
          s1 += g;
          s2 += g * xhat[r * D + j];
        }
        const T k = inv_std[r] / static_cast<T>(D);
        for (std::size_t j = 0; j < D; ++j) {
          const T g = dy[r * D + j] * gain.value()[j];
          dx[r * D + j] += k * (static_cast<T>(D) * g - s1 - xhat[r * D + j] * s2);
        }
      }
    });
  }
  return y;
}

/// Inverted dropout. Identity in eval mode or at rate 0.
template <class T>
Var<T> dropout(const Var<T>& x, double rate, bool train, SeededRng& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return x;
  const std::size_t n = x.size();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> factor(n);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    factor[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = x.value()[i] * factor[i];
  }
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(x);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([x, y, factor = std::move(factor), n] {
      if (!y.has_grad()) return;
      Tensor<T>& dx = x.node().grad_buffer();
      for (std::size_t i = 0; i < n; ++i) dx[i] += y.node().grad[i] * factor[i];
    });
  }
  return y;
}

/// Concatenates along `axis`; all other dimensions must agree.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != shape[d])
        throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(shape));
    total += s[axis];
  }
  shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  Tensor<T> out(shape);
  const std::size_t out_row = total * inner;
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t w = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().ptr() + o * w, w, out.ptr() + o * out_row + offset);
    offset += w;
  }
  Tape<T>* tape = Tape<T>::current();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!any) tape = nullptr;
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([parts, y, offsets = std::move(offsets), outer, inner, out_row, axis] {
      if (!y.has_grad()) return;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& p = parts[k];
        if (!p.requires_grad()) continue;
        const std::size_t w = p.shape()[axis] * inner;
        if (w == 0) continue;
        Tensor<T>& dp = p.node().grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < w; ++i)
            dp[o * w + i] += y.node().grad[o * out_row + offsets[k] + i];
      }
    });
  }
  return y;
}

/// Elements [start, start + length) along `axis`.
template <class T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  Shape shape = x.shape();
  if (axis >= shape.size() || start + length > shape[axis])
    throw ShapeError("slice out of range for " + shape_str(shape));
  const std::size_t full = shape[axis];
  shape[axis] = length;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.value().ptr() + (o * full + start) * inner, length * inner,
                out.ptr() + o * length * inner);
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(x);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([x, y, outer, inner, full, start, length] {
      if (!y.has_grad()) return;
      Tensor<T>& dx = x.node().grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < length * inner; ++i)
          dx[(o * full + start) * inner + i] += y.node().grad[o * length * inner + i];
    });
  }
  return y;
}

/// Stacks `copies` copies of v along a new leading axis.
template <class T>
Var<T> tile(const Var<T>& v, std::size_t copies) {
  Shape shape = v.shape();
  shape.insert(shape.begin(), copies);
  const std::size_t n = v.size();
  Tensor<T> out(shape);
  for (std::size_t c = 0; c < copies; ++c) std::copy_n(v.value().ptr(), n, out.ptr() + c * n);
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(v);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([v, y, copies, n] {
      if (!y.has_grad()) return;
      Tensor<T>& dv = v.node().grad_buffer();
      for (std::size_t c = 0; c < copies; ++c)
        for (std::size_t i = 0; i < n; ++i) dv[i] += y.node().grad[c * n + i];
    });
  }
  return y;
}

/// Mean over the valid time steps of x[B×T×D] → [B×D]. Rows with no valid
/// step yield zeros. Each channel is summed over its values sorted ascending
/// with a double-double accumulator, so the result does not depend on frame
/// order and repeating every frame leaves it unchanged.
template <class T>
Var<T> masked_mean(const Var<T>& x, const Mask& mask) {
  if (x.rank() != 3) throw ShapeError("masked_mean expects B×T×D, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), Tn = x.dim(1), D = x.dim(2);
  if (!mask.empty() && mask.size() != B * Tn) throw ShapeError("masked_mean: mask size mismatch");
  Tensor<T> out({B, D});
  std::vector<T> counts(B, T(0));
  std::vector<double> column;
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < Tn; ++t) count += detail::valid(mask, b * Tn + t);
    counts[b] = static_cast<T>(count);
    if (count == 0) continue;
    for (std::size_t d = 0; d < D; ++d) {
      column.clear();
      for (std::size_t t = 0; t < Tn; ++t)
        if (detail::valid(mask, b * Tn + t)) column.push_back(static_cast<double>(x.value()[(b * Tn + t) * D + d]));
      std::sort(column.begin(), column.end());
      double hi = 0.0, lo = 0.0;
      for (double v : column) {
        const double s = hi + v, bv = s - hi;
        lo += (hi - (s - bv)) + (v - bv);
        hi = s;
      }
      out[b * D + d] = static_cast<T>((hi + lo) / static_cast<double>(count));
    }
  }
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(x);
  Var<T> y = detail::output(std::move(out), tape);
  if (tape) {
    tape->record([x, y, mask, counts = std::move(counts), B, Tn, D] {
      if (!y.has_grad()) return;
      Tensor<T>& dx = x.node().grad_buffer();
      for (std::size_t b = 0; b < B; ++b) {
        if (counts[b] == T(0)) continue;
        for (std::size_t t = 0; t < Tn; ++t) {
          if (!detail::valid(mask, b * Tn + t)) continue;
          for (std::size_t d = 0; d < D; ++d) dx[(b * Tn + t) * D + d] += y.node().grad[b * D + d] / counts[b];
        }
      }
    });
  }
  return y;
}

namespace detail {

/// Gathers head h of x[b] (T×D) into a contiguous T×dh buffer.
template <class T>
void gather_head(const T* x, std::size_t Tn, std::size_t D, std::size_t h, std::size_t dh, T* out) {
  for (std::size_t t = 0; t < Tn; ++t) std::copy_n(x + t * D + h * dh, dh, out + t * dh);
}

template <class T>
void scatter_add_head(const T* src, std::size_t Tn, std::size_t D, std::size_t h, std::size_t dh, T* x) {
  for (std::size_t t = 0; t < Tn; ++t)
    for (std::size_t j = 0; j < dh; ++j) x[t * D + h * dh + j] += src[t * dh + j];
}

/// Attention probabilities P[B×H×T×T] and context O[B×T×D]. Pad keys get
/// probability exactly zero; a query with no valid key gets an all-zero row.
template <class T>
void attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Mask& mask,
                       std::size_t heads, Tensor<T>& probs, Tensor<T>& context) {
  const std::size_t B = q.dim(0), Tn = q.dim(1), D = q.dim(2), dh = D / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  probs = Tensor<T>({B, heads, Tn, Tn});
  context = Tensor<T>({B, Tn, D});
  kernels::parallel_for(B * heads, Tn * Tn * dh, [&](std::size_t i0, std::size_t i1) {
    std::vector<T> qh(Tn * dh), kh(Tn * dh), vh(Tn * dh), oh(Tn * dh);
    for (std::size_t bh = i0; bh < i1; ++bh) {
      const std::size_t b = bh / heads, h = bh % heads;
      const std::size_t base = b * Tn * D;
      gather_head(q.ptr() + base, Tn, D, h, dh, qh.data());
      gather_head(k.ptr() + base, Tn, D, h, dh, kh.data());
      gather_head(v.ptr() + base, Tn, D, h, dh, vh.data());
      T* P = probs.ptr() + bh * Tn * Tn;
      kernels::gemm_nt(Tn, Tn, dh, qh.data(), kh.data(), P, false);
      for (std::size_t t = 0; t < Tn; ++t) {
        T* row = P + t * Tn;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t s = 0; s < Tn; ++s)
          if (valid(mask, b * Tn + s)) mx = std::max(mx, row[s] * scale);
        if (mx == -std::numeric_limits<T>::infinity()) {
          std::fill(row, row + Tn, T(0));
          continue;
        }
        T z = T(0);
        for (std::size_t s = 0; s < Tn; ++s) {
          row[s] = valid(mask, b * Tn + s) ? std::exp(row[s] * scale - mx) : T(0);
          z += row[s];
        }
        for (std::size_t s = 0; s < Tn; ++s) row[s] /= z;
      }
      kernels::gemm_nn(Tn, dh, Tn, P, vh.data(), oh.data(), false);
      for (std::size_t t = 0; t < Tn; ++t)
        std::copy_n(oh.data() + t * dh, dh, context.ptr() + base + t * D + h * dh);
    }
  });
}

}  // namespace detail

/// Scaled dot-product attention over `heads` equal slices of the channel
/// dimension. q, k, v: B×T×D. Scores are scaled by 1/sqrt(D/heads); keys
/// flagged as pad in `mask` are excluded before the softmax.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Mask& mask,
                 std::size_t heads) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("attention expects equal B×T×D q/k/v");
  const std::size_t B = q.dim(0), Tn = q.dim(1), D = q.dim(2);
  if (heads == 0 || D % heads != 0)
    throw ShapeError("attention: model dim " + std::to_string(D) + " not divisible by " +
                     std::to_string(heads) + " heads");
  if (!mask.empty() && mask.size() != B * Tn) throw ShapeError("attention: mask size mismatch");
  Tensor<T> probs, context;
  detail::attention_forward(q.value(), k.value(), v.value(), mask, heads, probs, context);
  Tape<T>* tape = mmgenre::detail::recording_tape<T>(q, k, v);
  Var<T> y = detail::output(std::move(context), tape);
  if (tape) {
    tape->record([q, k, v, y, probs = std::move(probs), B, Tn, D, heads] {
      if (!y.has_grad()) return;
      const std::size_t dh = D / heads;
      const T scale = T(1) / std::sqrt(static_cast<T>(dh));
      T* dq = q.requires_grad() ? q.node().grad_buffer().ptr() : nullptr;
      T* dk = k.requires_grad() ? k.node().grad_buffer().ptr() : nullptr;
      T* dv = v.requires_grad() ? v.node().grad_buffer().ptr() : nullptr;
      // Heads write disjoint channel slices, batches disjoint rows.
      kernels::parallel_for(B * heads, Tn * Tn * dh, [&](std::size_t i0, std::size_t i1) {
        std::vector<T> qh(Tn * dh), kh(Tn * dh), vh(Tn * dh), doh(Tn * dh), tmp(Tn * dh);
        std::vector<T> dP(Tn * Tn);
        for (std::size_t bh = i0; bh < i1; ++bh) {
          const std::size_t b = bh / heads, h = bh % heads;
          const std::size_t base = b * Tn * D;
          const T* P = probs.ptr() + bh * Tn * Tn;
          detail::gather_head(y.node().grad.ptr() + base, Tn, D, h, dh, doh.data());
          detail::gather_head(q.value().ptr() + base, Tn, D, h, dh, qh.data());
          detail::gather_head(k.value().ptr() + base, Tn, D, h, dh, kh.data());
          detail::gather_head(v.value().ptr() + base, Tn, D, h, dh, vh.data());
          if (dv) {
            kernels::gemm_tn(Tn, dh, Tn, P, doh.data(), tmp.data(), false);
            detail::scatter_add_head(tmp.data(), Tn, D, h, dh, dv + base);
          }
          if (!dq && !dk) continue;
          kernels::gemm_nt(Tn, Tn, dh, doh.data(), vh.data(), dP.data(), false);
          for (std::size_t t = 0; t < Tn; ++t) {
            const T* p = P + t * Tn;
            T* g = dP.data() + t * Tn;
            T dot = T(0);
            for (std::size_t s = 0; s < Tn; ++s) dot += p[s] * g[s];
            for (std::size_t s = 0; s < Tn; ++s) g[s] = p[s] * (g[s] - dot) * scale;
          }
          if (dq) {
            kernels::gemm_nn(Tn, dh, Tn, dP.data(), kh.data(), tmp.data(), false);
            detail::scatter_add_head(tmp.data(), Tn, D, h, dh, dq + base);
          }
          if (dk) {
            kernels::gemm_tn(Tn, dh, Tn, dP.data(), qh.data(), tmp.data(), false);
            detail::scatter_add_head(tmp.data(), Tn, D, h, dh, dk + base);
          }
        }
      });
    });
  }
  return y;
}

/// Attention probabilities only (B×H×T×T); not differentiable.
template <class T>
Tensor<T> attention_probabilities(const Tensor<T>& q, const Tensor<T>& k, const Mask& mask,
                                  std::size_t heads) {
  Tensor<T> probs, context;
  detail::attention_forward(q, k, k, mask, heads, probs, context);
  return probs;
}

}  // namespace mmgenre::ops
