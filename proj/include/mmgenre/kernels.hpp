// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace mmgenre::kernels {

inline std::atomic<unsigned>& thread_budget() {
  static std::atomic<unsigned> n{1};
  return n;
}

inline void set_threads(unsigned n) { thread_budget() = std::max(1u, n); }

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks never split
/// the work of a single index, so results do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t cost_per_item, Fn&& fn) {
  const unsigned threads = thread_budget();
  constexpr std::size_t kMinWork = 1 << 16;
  if (threads <= 1 || n < 2 || n * cost_per_item < kMinWork) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t parts = std::min<std::size_t>(threads, n);
  std::vector<std::jthread> pool;
  pool.reserve(parts - 1);
  const std::size_t step = (n + parts - 1) / parts;
  for (std::size_t p = 1; p < parts; ++p) {
    const std::size_t b = p * step, e = std::min(n, b + step);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, step));
}

/// C[M×N] (+)= A[M×K] · B[K×N], all row-major and contiguous.
/// Each C[i][j] accumulates its K products in increasing k order starting
/// from the existing value (or zero when accumulate is false).
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
             bool accumulate) {
  parallel_for(M, N * K, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      T* __restrict c = C + i * N;
      if (!accumulate) std::fill(c, c + N, T(0));
      const T* a = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T av = a[k];
        const T* __restrict b = B + k * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  });
}

/// C[M×N] (+)= A[K×M]ᵀ · B[K×N].
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
             bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, T(0));
  parallel_for(M, N * K, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t k = 0; k < K; ++k) {
      const T* a = A + k * M;
      const T* __restrict b = B + k * N;
      for (std::size_t i = i0; i < i1; ++i) {
        const T av = a[i];
        T* __restrict c = C + i * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  });
}

/// C[M×N] (+)= A[M×K] · B[N×K]ᵀ. B is transposed into scratch first so the
/// inner loop stays contiguous.
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
             bool accumulate) {
  std::vector<T> bt(K * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
  gemm_nn(M, N, K, A, bt.data(), C, accumulate);
}

}  // namespace mmgenre::kernels
