// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmgenre/data/dataset.hpp"
#include "mmgenre/metrics.hpp"
#include "mmgenre/model/fusion.hpp"
#include "mmgenre/nn/optim.hpp"
#include "mmgenre/train/checkpoint.hpp"
#include "mmgenre/train/loss.hpp"

namespace mmgenre {

struct TrainConfig {
  ModelConfig model = preset(Architecture::kMultiTransformer);
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  double clip_norm = 1.0;
  std::size_t epochs = 10;
  std::size_t max_steps = 0;      // 0 = no step limit
  std::size_t eval_interval = 0;  // in steps; 0 = at the end of every epoch
  std::uint64_t seed = 0;
  std::string checkpoint_dir;     // empty = keep nothing on disk

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},           {"lr", c.lr},
       {"beta1", c.beta1},           {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},     {"batch_size", c.batch_size},
       {"clip_norm", c.clip_norm},   {"epochs", c.epochs},
       {"max_steps", c.max_steps},   {"eval_interval", c.eval_interval},
       {"seed", c.seed},             {"checkpoint_dir", c.checkpoint_dir}};
}

/// Missing fields keep their defaults. "dropout" and "positive_weight" may
/// also be given at top level; "preset" names the architecture when no
/// "model" object is present.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
  else if (j.contains("preset")) c.model = preset(parse_architecture(j["preset"].get<std::string>()));
  if (j.contains("dropout")) c.model.dropout = j["dropout"].get<double>();
  if (j.contains("positive_weight")) c.model.positive_weight = j["positive_weight"].get<double>();
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.epochs = j.value("epochs", c.epochs);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(c.lr >= 0.0)) throw ConfigError("lr must be non-negative");
  c.model.validate();
}

struct EvalRecord {
  std::size_t step = 0;
  MetricsReport report;
};

struct TrainHistory {
  std::vector<double> losses;  // losses[i] is the loss of step i + 1
  std::vector<EvalRecord> evals;
  std::optional<std::size_t> best_step;
  double best_map = -1.0;
  std::string best_checkpoint;

  /// step,loss,val_mAP,val_P,val_R; validation cells are empty on steps
  /// without an evaluation.
  std::string csv() const {
    std::ostringstream os;
    os.precision(9);
    os << "step,loss,val_mAP,val_P,val_R\n";
    std::size_t e = 0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
      const std::size_t step = i + 1;
      os << step << ',' << losses[i];
      while (e < evals.size() && evals[e].step < step) ++e;
      if (e < evals.size() && evals[e].step == step)
        os << ',' << evals[e].report.mean_ap << ',' << evals[e].report.macro_precision << ','
           << evals[e].report.macro_recall;
      else
        os << ",,,";
      os << '\n';
    }
    return os.str();
  }
};

/// Where a run stands; stored in checkpoints for resumption.
struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t batch_in_epoch = 0;
};

/// Collects eval-mode probabilities for every record, one unpadded sample
/// at a time (transformer inputs truncated to their positional tables).
template <class T>
Tensor<double> predict_all(const FusionModel<T>& model, const RecordSource& records,
                           Tensor<double>* targets = nullptr) {
  const std::size_t N = records.size();
  Tensor<double> scores({N, kNumGenres});
  if (targets) *targets = Tensor<double>({N, kNumGenres});
  for (std::size_t i = 0; i < N; ++i) {
    auto rec = records.get(i);
    const Prediction p = predict(model, *rec, model.config().threshold);
    std::copy(p.probabilities.begin(), p.probabilities.end(), scores.ptr() + i * kNumGenres);
    if (targets) {
      const auto row = label_row(*rec);
      std::copy(row.begin(), row.end(), targets->ptr() + i * kNumGenres);
    }
  }
  return scores;
}

template <class T>
MetricsReport evaluate(const FusionModel<T>& model, const RecordSource& records, double threshold) {
  if (records.size() == 0) throw DataError("evaluate: empty record set");
  Tensor<double> targets;
  const Tensor<double> scores = predict_all(model, records, &targets);
  return compute_metrics(scores, targets, threshold);
}

template <class T>
MetricsReport evaluate(const FusionModel<T>& model, const std::vector<VideoRecord>& records,
                       double threshold) {
  return evaluate(model, InMemorySource(records), threshold);
}

/// Per-epoch sample order: a Fisher-Yates shuffle seeded from (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng = SeededRng::derive(seed, 1, epoch);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

/// Minibatch training with weighted BCE, global-norm clipping and Adam.
///
/// Epoch e visits the training set in epoch_order(n, seed, e), in batches
/// of batch_size; the last, smaller batch is kept. Dropout at step s draws
/// from SeededRng::derive(seed, 2, s). Validation runs every eval_interval
/// steps (or per epoch) and the model with the highest validation mAP is
/// written to <checkpoint_dir>/best; <checkpoint_dir>/last always holds the
/// newest state including optimizer moments, from which resume() continues
/// bit-identically.
template <class T>
class Trainer {
 public:
  Trainer(TrainConfig config, FusionModel<T>& model, const RecordSource& train_set,
          const RecordSource* val_set = nullptr)
      : config_(std::move(config)), model_(model), train_(train_set), val_(val_set) {
    if (!(config_.model == model_.config()))
      throw ConfigError("train config and model config differ");
    if (train_.size() == 0) throw DataError("empty training set");
  }

  const TrainHistory& history() const { return history_; }
  const TrainState& state() const { return state_; }

  /// Puts the parameters with the best validation mAP seen by this trainer
  /// back into the model. Returns false if no validation happened.
  bool restore_best() {
    if (best_values_.empty()) return false;
    auto& entries = model_.parameters().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].param.mutable_value() = best_values_[i];
    return true;
  }

  /// Restores model, optimizer and position from a checkpoint written by run().
  void resume(const std::filesystem::path& checkpoint) {
    load_parameters(model_, checkpoint, true);
    const auto doc = read_checkpoint_metadata(checkpoint);
    if (!doc.contains("training_state")) throw DataError("checkpoint has no training state");
    const auto& ts = doc["training_state"];
    if (ts.at("config").get<TrainConfig>() != config_)
      throw ConfigError("cannot resume: training config differs from the checkpoint's");
    state_.step = ts.at("step");
    state_.epoch = ts.at("epoch");
    state_.batch_in_epoch = ts.at("batch_in_epoch");
    history_ = TrainHistory{};
    history_.losses = ts.at("losses").get<std::vector<double>>();
    history_.best_map = ts.at("best_map");
    if (!ts.at("best_step").is_null()) history_.best_step = ts["best_step"].get<std::size_t>();
    history_.best_checkpoint = ts.value("best_checkpoint", "");
    for (const auto& e : ts.at("evals")) {
      EvalRecord r;
      r.step = e.at("step");
      r.report.mean_ap = e.at("mAP");
      r.report.macro_precision = e.at("P");
      r.report.macro_recall = e.at("R");
      history_.evals.push_back(r);
    }
    best_values_.clear();
    if (!history_.best_checkpoint.empty() &&
        std::filesystem::exists(CheckpointPaths::from(history_.best_checkpoint).json)) {
      auto& entries = model_.parameters().entries();
      std::vector<Tensor<T>> current;
      for (const auto& e : entries) current.push_back(e.param.value());
      load_parameters(model_, history_.best_checkpoint);
      for (std::size_t i = 0; i < entries.size(); ++i) {
        best_values_.push_back(entries[i].param.value());
        entries[i].param.mutable_value() = current[i];
      }
    }
  }

  /// Trains until `epochs` or `max_steps`, or until `stop_after` further
  /// steps when given (used to interrupt runs deliberately).
  const TrainHistory& run(std::optional<std::size_t> stop_after = std::nullopt) {
    const std::size_t n = train_.size(), bs = config_.batch_size;
    const std::size_t batches_per_epoch = (n + bs - 1) / bs;
    const std::size_t stop_step = stop_after ? state_.step + *stop_after : SIZE_MAX;
    const nn::AdamConfig adam{config_.lr, config_.beta1, config_.beta2, config_.adam_eps};
    while (state_.epoch < config_.epochs) {
      const auto order = epoch_order(n, config_.seed, state_.epoch);
      while (state_.batch_in_epoch < batches_per_epoch) {
        if (done() || state_.step >= stop_step) return finish();
        const std::size_t begin = state_.batch_in_epoch * bs, end = std::min(n, begin + bs);
        std::vector<std::shared_ptr<const VideoRecord>> held;
        std::vector<const VideoRecord*> samples;
        for (std::size_t i = begin; i < end; ++i) {
          held.push_back(train_.get(order[i]));
          samples.push_back(held.back().get());
        }
        step_on(samples, adam);
        ++state_.batch_in_epoch;
        if (config_.eval_interval && state_.step % config_.eval_interval == 0) validate();
      }
      state_.batch_in_epoch = 0;
      ++state_.epoch;
      if (!config_.eval_interval) validate();
    }
    return finish();
  }

 private:
  bool done() const { return config_.max_steps && state_.step >= config_.max_steps; }

  const TrainHistory& finish() {
    if (!config_.checkpoint_dir.empty()) save_last();
    return history_;
  }

  void step_on(const std::vector<const VideoRecord*>& samples, const nn::AdamConfig& adam) {
    Batch batch = make_batch(std::span<const VideoRecord* const>(samples), model_.config().modalities);
    SeededRng dropout_rng = SeededRng::derive(config_.seed, 2, state_.step);
    Tape<T> tape;
    Var<T> loss;
    {
      TapeScope<T> scope(tape);
      Var<T> logits = model_.forward(batch, nn::ForwardMode::training(dropout_rng));
      loss = weighted_bce(logits, batch.labels.template cast<T>(), model_.config().positive_weight);
    }
    const double value = static_cast<double>(loss.value().item());
    if (!std::isfinite(value)) {
      std::string ids;
      for (auto* s : samples) ids += (ids.empty() ? "" : ", ") + s->id;
      throw NumericError("non-finite loss at step " + std::to_string(state_.step + 1) +
                         " on batch [" + ids + "]");
    }
    tape.backward(loss);
    auto& store = model_.parameters();
    auto grads = store.gradients();
    store.zero_grad();
    nn::clip_global_norm(std::span<Tensor<T>>(grads), config_.clip_norm);
    nn::adam_step(store, std::span<const Tensor<T>>(grads), adam);
    ++state_.step;
    history_.losses.push_back(value);
  }

  void validate() {
    if (!val_ || val_->size() == 0) return;
    EvalRecord rec{state_.step, evaluate(model_, *val_, model_.config().threshold)};
    const bool better = rec.report.mean_ap > history_.best_map;
    history_.evals.push_back(std::move(rec));
    if (!better) return;
    history_.best_map = history_.evals.back().report.mean_ap;
    history_.best_step = state_.step;
    best_values_.clear();
    for (const auto& e : model_.parameters().entries()) best_values_.push_back(e.param.value());
    if (!config_.checkpoint_dir.empty()) {
      const auto path = std::filesystem::path(config_.checkpoint_dir) / "best";
      save_checkpoint(model_, path);
      history_.best_checkpoint = path.string();
    }
  }

  nlohmann::json state_json() const {
    nlohmann::json evals = nlohmann::json::array();
    for (const auto& e : history_.evals)
      evals.push_back({{"step", e.step},
                       {"mAP", e.report.mean_ap},
                       {"P", e.report.macro_precision},
                       {"R", e.report.macro_recall}});
    return {{"config", config_},
            {"step", state_.step},
            {"epoch", state_.epoch},
            {"batch_in_epoch", state_.batch_in_epoch},
            {"losses", history_.losses},
            {"evals", evals},
            {"best_map", history_.best_map},
            {"best_step", history_.best_step ? nlohmann::json(*history_.best_step) : nlohmann::json(nullptr)},
            {"best_checkpoint", history_.best_checkpoint}};
  }

  void save_last() {
    save_checkpoint(model_, std::filesystem::path(config_.checkpoint_dir) / "last", true, state_json());
  }

  TrainConfig config_;
  FusionModel<T>& model_;
  const RecordSource& train_;
  const RecordSource* val_;
  TrainState state_;
  TrainHistory history_;
  std::vector<Tensor<T>> best_values_;
};

}  // namespace mmgenre
