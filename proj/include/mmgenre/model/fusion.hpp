// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmgenre/data/batch.hpp"
#include "mmgenre/model/config.hpp"
#include "mmgenre/nn/layers.hpp"

namespace mmgenre {

/// Converts a float feature tensor to the model's scalar type.
template <class T>
Var<T> input_var(const Tensor<float>& x) {
  if constexpr (std::is_same_v<T, float>) return ops::constant(x);
  else return ops::constant(x.template cast<T>());
}

/// Arithmetic mean over the rows of one T×D sequence; zeros when T = 0.
inline std::vector<float> temporal_average(const FeatureSequence& seq) {
  const std::size_t D = seq.dim(1);
  Var<float> x = ops::constant(seq.reshaped({1, seq.dim(0), D}));
  auto m = ops::masked_mean(x, {});
  return {m.value().data().begin(), m.value().data().end()};
}

/// The three genre classifiers behind one interface: padded per-modality
/// sequences in, B×21 logits out.
///
/// mlp:                masked temporal mean per modality → concat →
///                     [Linear(dim) → ReLU → Dropout] × layers → Linear(21)
/// single_transformer: [CLS, SEP_1, seg_1, SEP_2, seg_2, ...] where
///                     seg_m = Linear_m(x_m) + pos_m; shared encoder;
///                     Dropout → Linear(21) on the CLS output
/// multi_transformer:  per modality [CLS_m, Linear_m(x_m) + pos_m] through
///                     its own encoder, CLS_m outputs concatenated; averaged
///                     modalities contribute Linear_m(mean(x_m)) instead;
///                     Dropout → Linear(21)
///
/// In the single transformer an averaged modality's segment is
/// [SEP_m, Linear_m(mean(x_m))] without positional embedding. SEP vectors
/// never receive positional embeddings.
template <class T>
class FusionModel {
 public:
  FusionModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    SeededRng rng(seed);
    const std::size_t d = config_.model_dim;
    switch (config_.architecture) {
      case Architecture::kMlp: {
        std::size_t width = 0;
        for (const auto& m : config_.modalities) width += m.input_dim;
        for (std::size_t i = 0; i < config_.layers; ++i) {
          hidden_.push_back(nn::Linear<T>::create(store_, "mlp.hidden" + std::to_string(i), width, d, rng));
          width = d;
        }
        head_ = nn::Linear<T>::create(store_, "head", width, kNumGenres, rng);
        break;
      }
      case Architecture::kSingleTransformer: {
        cls_ = store_.add("single.cls", nn::init::normal<T>({d}, 0.02, rng));
        for (const auto& m : config_.modalities) {
          Branch br;
          const std::string p = "single." + m.name;
          br.projection = nn::Linear<T>::create(store_, p + ".proj", m.input_dim, d, rng);
          if (!m.temporal_average)
            br.positions = nn::PositionalTable<T>::create(store_, p + ".pos", m.train_max_len, d, rng);
          br.marker = store_.add(p + ".sep", nn::init::normal<T>({d}, 0.02, rng));
          branches_.push_back(std::move(br));
        }
        encoder_ = nn::Encoder<T>::create(store_, "single.encoder", config_.layers, d, config_.heads,
                                          config_.dropout, rng);
        head_ = nn::Linear<T>::create(store_, "head", d, kNumGenres, rng);
        break;
      }
      case Architecture::kMultiTransformer: {
        for (const auto& m : config_.modalities) {
          Branch br;
          const std::string p = "multi." + m.name;
          br.projection = nn::Linear<T>::create(store_, p + ".proj", m.input_dim, d, rng);
          if (!m.temporal_average) {
            br.positions = nn::PositionalTable<T>::create(store_, p + ".pos", m.train_max_len, d, rng);
            br.marker = store_.add(p + ".cls", nn::init::normal<T>({d}, 0.02, rng));
            br.encoder = nn::Encoder<T>::create(store_, p + ".encoder", config_.layers, d,
                                                config_.heads, config_.dropout, rng);
          }
          branches_.push_back(std::move(br));
        }
        head_ = nn::Linear<T>::create(store_, "head", d * config_.modalities.size(), kNumGenres, rng);
        break;
      }
    }
  }

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore<T>& parameters() { return store_; }
  const nn::ParameterStore<T>& parameters() const { return store_; }

  /// Longest sequence a modality may present: the positional table length
  /// for transformer branches that see the raw sequence, unbounded otherwise.
  std::optional<std::size_t> sequence_limit(const std::string& modality) const {
    if (!config_.is_transformer()) return std::nullopt;
    const ModalitySpec* m = config_.find(modality);
    if (!m) throw ConfigError("modality not enabled in model: " + modality);
    if (m->temporal_average) return std::nullopt;
    return m->train_max_len;
  }

  /// Length policy for single-sample inference on full-duration input.
  LengthPolicy inference_policy() const {
    std::map<std::string, std::size_t> caps;
    for (const auto& m : config_.modalities)
      if (auto lim = sequence_limit(m.name)) caps[m.name] = *lim;
    return LengthPolicy::natural(std::move(caps));
  }

  /// B×21 logits.
  Var<T> forward(const Batch& batch, const nn::ForwardMode& mode) const {
    for (const auto& m : config_.modalities) {
      auto it = batch.modalities.find(m.name);
      if (it == batch.modalities.end()) throw DataError("batch lacks modality " + m.name);
      const auto& x = it->second.values;
      if (x.rank() != 3 || x.dim(2) != m.input_dim || x.dim(0) != batch.size())
        throw DataError("modality " + m.name + " batch has shape " + shape_str(x.shape()) +
                        ", expected width " + std::to_string(m.input_dim));
    }
    switch (config_.architecture) {
      case Architecture::kMlp: return forward_mlp(batch, mode);
      case Architecture::kSingleTransformer: return forward_single(batch, mode);
      case Architecture::kMultiTransformer: return forward_multi(batch, mode);
    }
    throw std::logic_error("unreachable");
  }

  /// Fused input sequence of the single transformer before the encoder:
  /// B × (1 + Σ(1 + T_m)) × dim, and its validity mask.
  std::pair<Var<T>, ops::Mask> assemble_single_sequence(const Batch& batch) const {
    if (config_.architecture != Architecture::kSingleTransformer)
      throw std::logic_error("assemble_single_sequence on a non-single-transformer model");
    const std::size_t B = batch.size();
    std::vector<Var<T>> segments{ops::reshape(ops::tile(cls_, B), {B, 1, config_.model_dim})};
    std::vector<ops::Mask> masks{ops::Mask(B, 1)};
    std::vector<std::size_t> lengths{1};
    for (std::size_t i = 0; i < config_.modalities.size(); ++i) {
      const auto& spec = config_.modalities[i];
      const auto& br = branches_[i];
      const ModalityBatch& mb = modality(batch, spec.name);
      segments.push_back(ops::reshape(ops::tile(br.marker, B), {B, 1, config_.model_dim}));
      masks.emplace_back(B, 1);
      lengths.push_back(1);
      if (spec.temporal_average) {
        Var<T> avg = br.projection(ops::masked_mean(input_var<T>(mb.values), mb.mask));
        segments.push_back(ops::reshape(avg, {B, 1, config_.model_dim}));
        masks.emplace_back(B, 1);
        lengths.push_back(1);
      } else {
        segments.push_back(br.positions(br.projection(input_var<T>(mb.values))));
        masks.push_back(mb.mask);
        lengths.push_back(mb.values.dim(1));
      }
    }
    std::size_t total = 0;
    for (auto l : lengths) total += l;
    ops::Mask mask(B * total);
    for (std::size_t b = 0; b < B; ++b) {
      std::size_t off = 0;
      for (std::size_t s = 0; s < masks.size(); ++s) {
        std::copy_n(masks[s].begin() + b * lengths[s], lengths[s], mask.begin() + b * total + off);
        off += lengths[s];
      }
    }
    return {ops::concat(segments, 1), std::move(mask)};
  }

 private:
  struct Branch {
    nn::Linear<T> projection;
    nn::PositionalTable<T> positions;
    Var<T> marker;  // SEP (single) or CLS (multi)
    nn::Encoder<T> encoder;
  };

  static const ModalityBatch& modality(const Batch& batch, const std::string& name) {
    return batch.modalities.at(name);
  }

  Var<T> forward_mlp(const Batch& batch, const nn::ForwardMode& mode) const {
    std::vector<Var<T>> pooled;
    for (const auto& spec : config_.modalities) {
      const ModalityBatch& mb = modality(batch, spec.name);
      pooled.push_back(ops::masked_mean(input_var<T>(mb.values), mb.mask));
    }
    Var<T> h = pooled.size() == 1 ? pooled.front() : ops::concat(pooled, 1);
    for (const auto& layer : hidden_) h = nn::dropout(ops::relu(layer(h)), config_.dropout, mode);
    return head_(h);
  }

  Var<T> forward_single(const Batch& batch, const nn::ForwardMode& mode) const {
    auto [seq, mask] = assemble_single_sequence(batch);
    Var<T> out = encoder_(seq, mask, mode);
    Var<T> cls = ops::reshape(ops::slice(out, 1, 0, 1), {batch.size(), config_.model_dim});
    return head_(nn::dropout(cls, config_.dropout, mode));
  }

  Var<T> forward_multi(const Batch& batch, const nn::ForwardMode& mode) const {
    const std::size_t B = batch.size(), d = config_.model_dim;
    std::vector<Var<T>> features;
    for (std::size_t i = 0; i < config_.modalities.size(); ++i) {
      const auto& spec = config_.modalities[i];
      const auto& br = branches_[i];
      const ModalityBatch& mb = modality(batch, spec.name);
      if (spec.temporal_average) {
        features.push_back(br.projection(ops::masked_mean(input_var<T>(mb.values), mb.mask)));
        continue;
      }
      const std::size_t Tn = mb.values.dim(1);
      Var<T> seq = br.positions(br.projection(input_var<T>(mb.values)));
      seq = ops::concat<T>({ops::reshape(ops::tile(br.marker, B), {B, 1, d}), seq}, 1);
      ops::Mask mask(B * (Tn + 1));
      for (std::size_t b = 0; b < B; ++b) {
        mask[b * (Tn + 1)] = 1;
        std::copy_n(mb.mask.begin() + b * Tn, Tn, mask.begin() + b * (Tn + 1) + 1);
      }
      Var<T> out = br.encoder(seq, mask, mode);
      features.push_back(ops::reshape(ops::slice(out, 1, 0, 1), {B, d}));
    }
    Var<T> h = features.size() == 1 ? features.front() : ops::concat(features, 1);
    return head_(nn::dropout(h, config_.dropout, mode));
  }

  ModelConfig config_;
  nn::ParameterStore<T> store_;
  std::vector<nn::Linear<T>> hidden_;
  std::vector<Branch> branches_;
  nn::Encoder<T> encoder_;
  Var<T> cls_;
  nn::Linear<T> head_;
};

struct Prediction {
  std::vector<double> probabilities;  // 21
  std::vector<bool> decisions;        // probability ≥ threshold
};

/// Eval-mode prediction for one record using its full duration (transformer
/// branches truncate to their positional table length).
template <class T>
Prediction predict(const FusionModel<T>& model, const VideoRecord& record, double threshold) {
  const VideoRecord* ptr = &record;
  Batch batch = make_batch(std::span<const VideoRecord* const>(&ptr, 1), model.config().modalities,
                           model.inference_policy());
  Var<T> logits = model.forward(batch, nn::ForwardMode::eval());
  Prediction p;
  for (std::size_t c = 0; c < kNumGenres; ++c) {
    const double prob = static_cast<double>(ops::sigmoid_scalar(logits.value()[c]));
    p.probabilities.push_back(prob);
    p.decisions.push_back(prob >= threshold);
  }
  return p;
}

}  // namespace mmgenre
