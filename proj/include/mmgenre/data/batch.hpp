// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmgenre/data/record.hpp"
#include "mmgenre/ops.hpp"

namespace mmgenre {

struct ModalityBatch {
  Tensor<float> values;  // B × T × D, pads hold zeros
  ops::Mask mask;        // B × T, 1 = real element
};

struct Batch {
  std::vector<std::string> ids;
  std::map<std::string, ModalityBatch> modalities;
  Tensor<float> labels;  // B × 21, 0/1

  std::size_t size() const { return ids.size(); }
};

/// How sequences are sized inside a batch.
///   kFixed    every modality padded/truncated to its train_max_len
///   kNatural  padded to the longest sample; `caps` (when set for a
///             modality) truncates longer sequences first
struct LengthPolicy {
  enum class Kind { kFixed, kNatural } kind = Kind::kFixed;
  std::map<std::string, std::size_t> caps;

  static LengthPolicy fixed() { return {}; }
  static LengthPolicy natural(std::map<std::string, std::size_t> caps = {}) {
    return {Kind::kNatural, std::move(caps)};
  }
};

/// Stacks samples into padded tensors. Sequences longer than the target keep
/// their first elements; shorter ones are zero-padded and masked. Sample
/// order and label rows are preserved.
inline Batch make_batch(std::span<const VideoRecord* const> samples,
                        const std::vector<ModalitySpec>& specs,
                        const LengthPolicy& policy = LengthPolicy::fixed()) {
  Batch batch;
  const std::size_t B = samples.size();
  batch.labels = Tensor<float>({B, kNumGenres});
  for (std::size_t b = 0; b < B; ++b) {
    batch.ids.push_back(samples[b]->id);
    const auto row = label_row(*samples[b]);
    std::copy(row.begin(), row.end(), batch.labels.ptr() + b * kNumGenres);
  }
  for (const auto& spec : specs) {
    const std::size_t D = spec.input_dim;
    std::size_t cap = spec.train_max_len;
    std::size_t Tn = spec.train_max_len;
    if (policy.kind == LengthPolicy::Kind::kNatural) {
      auto it = policy.caps.find(spec.name);
      cap = it == policy.caps.end() ? SIZE_MAX : it->second;
      Tn = 0;
      for (auto* s : samples) Tn = std::max(Tn, std::min(cap, s->length(spec.name)));
    }
    ModalityBatch mb{Tensor<float>({B, Tn, D}), ops::Mask(B * Tn, 0)};
    for (std::size_t b = 0; b < B; ++b) {
      auto it = samples[b]->features.find(spec.name);
      if (it == samples[b]->features.end())
        throw DataError("sample " + samples[b]->id + " lacks modality " + spec.name);
      const FeatureSequence& f = it->second;
      if (f.rank() != 2 || f.dim(1) != D)
        throw DataError("sample " + samples[b]->id + " modality " + spec.name + " has shape " +
                        shape_str(f.shape()) + ", expected width " + std::to_string(D));
      const std::size_t keep = std::min({f.dim(0), Tn, cap});
      std::copy_n(f.ptr(), keep * D, mb.values.ptr() + b * Tn * D);
      std::fill_n(mb.mask.begin() + b * Tn, keep, std::uint8_t{1});
    }
    batch.modalities.emplace(spec.name, std::move(mb));
  }
  return batch;
}

inline Batch make_batch(const std::vector<VideoRecord>& samples,
                        const std::vector<ModalitySpec>& specs,
                        const LengthPolicy& policy = LengthPolicy::fixed()) {
  std::vector<const VideoRecord*> ptrs;
  for (auto& s : samples) ptrs.push_back(&s);
  return make_batch(std::span<const VideoRecord* const>(ptrs), specs, policy);
}

}  // namespace mmgenre
