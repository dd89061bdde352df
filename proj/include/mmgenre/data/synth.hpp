// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic datasets with known structure, for tests and demos.

#include <cstdio>
#include <string>
#include <vector>

#include "mmgenre/data/record.hpp"
#include "mmgenre/rng.hpp"

namespace mmgenre {

inline std::string synth_id(const char* prefix, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

struct MeanEncodedOptions {
  std::vector<ModalitySpec> specs = standard_modalities();
  double genre_probability = 0.15;
  std::size_t min_length = 1;  // T is drawn uniformly from [min_length, train_max_len]
};

/// Per-modality, per-genre signature vectors used by synth_mean_encoded:
/// signatures[m][g] has length specs[m].input_dim, entries N(0, 1).
inline std::vector<std::vector<std::vector<double>>> mean_encoded_signatures(
    std::uint64_t seed, const std::vector<ModalitySpec>& specs) {
  SeededRng rng = SeededRng::derive(seed, 0x5167);
  std::vector<std::vector<std::vector<double>>> sig(specs.size());
  for (std::size_t m = 0; m < specs.size(); ++m)
    for (std::size_t g = 0; g < kNumGenres; ++g) {
      std::vector<double> v(specs[m].input_dim);
      for (auto& x : v) x = rng.normal();
      sig[m].push_back(std::move(v));
    }
  return sig;
}

/// Every frame of modality m equals the sum of the signatures of the
/// record's genres plus N(0, noise_std) noise, so the temporal mean is a
/// linear function of the label vector (exactly so at noise_std = 0).
/// Each genre is active with `genre_probability`; a record with no active
/// genre gets one drawn uniformly.
inline std::vector<VideoRecord> synth_mean_encoded(std::size_t n, std::uint64_t seed, double noise_std,
                                                   const MeanEncodedOptions& opt = {}) {
  if (n == 0) throw std::invalid_argument("synth_mean_encoded: n must be >= 1");
  const auto sig = mean_encoded_signatures(seed, opt.specs);
  SeededRng rng = SeededRng::derive(seed, 0x4d45);
  std::vector<VideoRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    VideoRecord r;
    r.id = synth_id("mean-", i);
    r.duration_s = rng.uniform(19.6, 214.4);
    std::vector<std::size_t> active;
    for (std::size_t g = 0; g < kNumGenres; ++g)
      if (rng.bernoulli(opt.genre_probability)) active.push_back(g);
    if (active.empty()) active.push_back(static_cast<std::size_t>(rng.below(kNumGenres)));
    for (auto g : active) r.genres.emplace_back(kGenres[g]);
    for (std::size_t m = 0; m < opt.specs.size(); ++m) {
      const auto& spec = opt.specs[m];
      const std::size_t lo = std::min(opt.min_length, spec.train_max_len);
      const std::size_t Tn = lo + static_cast<std::size_t>(rng.below(spec.train_max_len - lo + 1));
      std::vector<double> base(spec.input_dim, 0.0);
      for (auto g : active)
        for (std::size_t d = 0; d < spec.input_dim; ++d) base[d] += sig[m][g][d];
      FeatureSequence seq({Tn, spec.input_dim});
      for (std::size_t t = 0; t < Tn; ++t)
        for (std::size_t d = 0; d < spec.input_dim; ++d)
          seq[t * spec.input_dim + d] =
              static_cast<float>(base[d] + (noise_std > 0 ? rng.normal(0.0, noise_std) : 0.0));
      r.features.emplace(spec.name, std::move(seq));
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct OrderEncodedOptions {
  ModalitySpec spec = standard_modality("clip");
  std::size_t min_length = 64;
  std::size_t max_length = 128;
  double marker_noise = 0.1;
};

/// Where the two marker blocks of an order-encoded record sit.
struct OrderLayout {
  std::size_t first_block = 0;   // start, inside the first half
  std::size_t second_block = 0;  // start, inside the second half
  std::size_t block_length = 0;
  bool a_first = false;
};

/// Label "Action" when marker block A precedes marker block B, "Adventure"
/// otherwise. Each record holds T background frames (N(0,1) entries) except
/// for two blocks of T/4 frames: one of pattern A (plus noise) placed in the
/// first half, one of pattern B placed in the second half, or the reverse.
/// The record's frames are drawn before the label decides which block goes
/// where, so both classes share the same frame multiset and the temporal
/// mean carries no label information.
inline std::vector<VideoRecord> synth_order_encoded(std::size_t n, std::uint64_t seed,
                                                    const OrderEncodedOptions& opt = {},
                                                    std::vector<OrderLayout>* layouts = nullptr) {
  if (n == 0) throw std::invalid_argument("synth_order_encoded: n must be >= 1");
  if (opt.min_length < 8 || opt.max_length < opt.min_length)
    throw std::invalid_argument("synth_order_encoded: need 8 <= min_length <= max_length");
  const std::size_t D = opt.spec.input_dim;
  SeededRng rng = SeededRng::derive(seed, 0x4f52);
  std::vector<double> pattern_a(D), pattern_b(D);
  for (auto& v : pattern_a) v = rng.normal();
  for (auto& v : pattern_b) v = rng.normal();
  std::vector<VideoRecord> out;
  if (layouts) layouts->clear();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t Tn =
        opt.min_length + static_cast<std::size_t>(rng.below(opt.max_length - opt.min_length + 1));
    const std::size_t half = Tn / 2, L = Tn / 4;
    OrderLayout lay;
    lay.block_length = L;
    lay.first_block = static_cast<std::size_t>(rng.below(half - L + 1));
    lay.second_block = half + static_cast<std::size_t>(rng.below(Tn - half - L + 1));
    FeatureSequence seq({Tn, D});
    for (std::size_t t = 0; t < Tn; ++t)
      for (std::size_t d = 0; d < D; ++d) seq[t * D + d] = static_cast<float>(rng.normal());
    std::vector<float> block_a(L * D), block_b(L * D);
    for (std::size_t k = 0; k < L * D; ++k) {
      block_a[k] = static_cast<float>(pattern_a[k % D] + rng.normal(0.0, opt.marker_noise));
      block_b[k] = static_cast<float>(pattern_b[k % D] + rng.normal(0.0, opt.marker_noise));
    }
    lay.a_first = rng.bernoulli(0.5);
    const auto& early = lay.a_first ? block_a : block_b;
    const auto& late = lay.a_first ? block_b : block_a;
    std::copy(early.begin(), early.end(), seq.ptr() + lay.first_block * D);
    std::copy(late.begin(), late.end(), seq.ptr() + lay.second_block * D);

    VideoRecord r;
    r.id = synth_id("order-", i);
    r.duration_s = rng.uniform(19.6, 214.4);
    r.genres = {lay.a_first ? "Action" : "Adventure"};
    r.features.emplace(opt.spec.name, std::move(seq));
    out.push_back(std::move(r));
    if (layouts) layouts->push_back(lay);
  }
  return out;
}

/// Exchanges the two marker blocks of an order-encoded record and flips its
/// label accordingly.
inline void swap_marker_blocks(VideoRecord& r, OrderLayout& lay, const std::string& modality = "clip") {
  FeatureSequence& seq = r.features.at(modality);
  const std::size_t D = seq.dim(1);
  std::swap_ranges(seq.ptr() + lay.first_block * D, seq.ptr() + (lay.first_block + lay.block_length) * D,
                   seq.ptr() + lay.second_block * D);
  lay.a_first = !lay.a_first;
  r.genres = {lay.a_first ? "Action" : "Adventure"};
}

}  // namespace mmgenre
