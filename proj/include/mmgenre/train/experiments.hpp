// SPDX-License-Identifier: Apache-2.0
#pragma once

// Feature-set ablation and frame-count sweep.

#include <array>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mmgenre/train/trainer.hpp"

namespace mmgenre {

/// Applies `transform` to every record of `base` on access.
class TransformSource : public RecordSource {
 public:
  using Fn = std::function<VideoRecord(const VideoRecord&, std::size_t)>;
  TransformSource(const RecordSource& base, Fn transform) : base_(base), fn_(std::move(transform)) {}
  std::size_t size() const override { return base_.size(); }
  const std::string& id(std::size_t i) const override { return base_.id(i); }
  std::shared_ptr<const VideoRecord> get(std::size_t i) const override {
    return std::make_shared<const VideoRecord>(fn_(*base_.get(i), i));
  }

 private:
  const RecordSource& base_;
  Fn fn_;
};

struct DataSplits {
  const RecordSource* train = nullptr;
  const RecordSource* val = nullptr;
  const RecordSource* test = nullptr;
};

struct RunResult {
  TrainHistory history;
  MetricsReport test;
  Tensor<double> test_scores;
  Tensor<double> test_targets;
  std::size_t parameter_count = 0;
};

/// Trains one float model from scratch, keeps the best-validation
/// parameters (when a validation set is given) and scores the test set.
inline RunResult train_and_test(const TrainConfig& config, const DataSplits& data) {
  FusionModel<float> model(config.model, config.seed);
  Trainer<float> trainer(config, model, *data.train, data.val);
  RunResult out;
  out.history = trainer.run();
  trainer.restore_best();
  out.parameter_count = model.parameters().total_parameter_count();
  if (data.test && data.test->size()) {
    out.test_scores = predict_all(model, *data.test, &out.test_targets);
    out.test = compute_metrics(out.test_scores, out.test_targets, config.model.threshold);
  }
  return out;
}

struct AblationRow {
  std::string label;
  std::vector<std::string> modalities;  // in fusion order
  std::vector<std::string> averaged;    // subset fed as temporal means
  double reference_map;                 // percent
};

/// The seven feature sets, each added on top of the previous CLIP-based
/// set; "*" marks temporally averaged text features.
inline std::vector<AblationRow> ablation_rows() {
  return {
      {"clip", {"clip"}, {}, 64.73},
      {"clip+musicnet", {"clip", "musicnet"}, {}, 65.17},
      {"clip+musicnet+audiotag", {"clip", "musicnet", "audiotag"}, {}, 65.31},
      {"clip+musicnet+audiotag+ocr", {"clip", "musicnet", "audiotag", "ocr"}, {}, 63.33},
      {"clip+musicnet+audiotag+ocr*", {"clip", "musicnet", "audiotag", "ocr"}, {"ocr"}, 65.46},
      {"clip+musicnet+audiotag+ocr+asr", {"clip", "musicnet", "audiotag", "ocr", "asr"}, {}, 64.66},
      {"clip+musicnet+audiotag+ocr*+asr*", {"clip", "musicnet", "audiotag", "ocr", "asr"}, {"ocr", "asr"}, 66.02},
  };
}

/// Restricts `base` to the row's modalities (specs taken from base, so
/// widths and lengths carry over) with the row's averaging flags.
inline ModelConfig ablation_config(const ModelConfig& base, const AblationRow& row) {
  ModelConfig c = base;
  c.modalities.clear();
  for (const auto& name : row.modalities) {
    const ModalitySpec* spec = base.find(name);
    if (!spec) throw ConfigError("ablation needs modality " + name + " in the base config");
    ModalitySpec m = *spec;
    m.temporal_average = std::find(row.averaged.begin(), row.averaged.end(), name) != row.averaged.end();
    c.modalities.push_back(m);
  }
  return c;
}

struct AblationResult {
  AblationRow row;
  std::uint64_t seed = 0;
  double test_map = 0.0;
  double best_val_map = 0.0;
  std::size_t parameter_count = 0;
};

/// Retrains from scratch per row; row i uses seed derive(seed, 0xab1a, i).
inline std::vector<AblationResult> run_ablation(const TrainConfig& base, const DataSplits& data,
                                                const std::function<void(const AblationResult&)>& on_row = {}) {
  std::vector<AblationResult> results;
  const auto rows = ablation_rows();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    TrainConfig cfg = base;
    cfg.model = ablation_config(base.model, rows[i]);
    cfg.seed = SeededRng::derive(base.seed, 0xab1a, i).next();
    if (!base.checkpoint_dir.empty()) cfg.checkpoint_dir = base.checkpoint_dir + "/ablation-" + std::to_string(i);
    const RunResult run = train_and_test(cfg, data);
    results.push_back({rows[i], cfg.seed, run.test.mean_ap, run.history.best_map, run.parameter_count});
    if (on_row) on_row(results.back());
  }
  return results;
}

inline std::string ablation_csv(const std::vector<AblationResult>& results) {
  static const std::array<const char*, 5> order = {"clip", "musicnet", "audiotag", "ocr", "asr"};
  std::ostringstream os;
  os.precision(6);
  os << "row,clip,musicnet,audiotag,ocr,asr,test_mAP,val_mAP,reference_mAP,parameters,seed\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    os << i + 1;
    for (const char* m : order) {
      const auto& ms = r.row.modalities;
      const auto& av = r.row.averaged;
      os << ',';
      if (std::find(av.begin(), av.end(), m) != av.end()) os << '*';
      else if (std::find(ms.begin(), ms.end(), m) != ms.end()) os << 'x';
    }
    os << ',' << r.test_map * 100.0 << ',' << r.best_val_map * 100.0 << ',' << r.row.reference_map << ','
       << r.parameter_count << ',' << r.seed << '\n';
  }
  return os.str();
}

/// Keeps `frames` time steps of `modality`, chosen uniformly without
/// replacement and left in temporal order. Shorter sequences are kept whole.
inline VideoRecord subsample_frames(const VideoRecord& r, const std::string& modality, std::size_t frames,
                                    SeededRng& rng) {
  VideoRecord out = r;
  auto it = out.features.find(modality);
  if (it == out.features.end()) throw DataError("record " + r.id + " lacks modality " + modality);
  const FeatureSequence& seq = it->second;
  const std::size_t Tn = seq.dim(0), D = seq.dim(1);
  if (Tn <= frames) return out;
  const auto keep = rng.sample_sorted(Tn, frames);
  FeatureSequence sub({frames, D});
  for (std::size_t k = 0; k < frames; ++k) std::copy_n(seq.ptr() + keep[k] * D, D, sub.ptr() + k * D);
  it->second = std::move(sub);
  return out;
}

inline const std::vector<std::size_t>& sweep_frame_counts() {
  static const std::vector<std::size_t> counts = {8, 16, 32, 64, 128, 256};
  return counts;
}

struct SweepConfig {
  TrainConfig mlp;          // restricted to clip, averaged
  TrainConfig transformer;  // restricted to clip; positional table sized to n
  std::vector<std::size_t> frame_counts = sweep_frame_counts();
  std::string modality = "clip";
};

struct SweepResult {
  std::size_t frames = 0;
  std::string model;
  double test_map = 0.0;
  double best_val_map = 0.0;
  RunResult run;
};

/// Config of one sweep row: only `modality`, train length n.
inline ModelConfig sweep_model_config(const ModelConfig& base, const std::string& modality, std::size_t n) {
  ModelConfig c = base;
  const ModalitySpec* spec = base.find(modality);
  ModalitySpec m = spec ? *spec : standard_modality(modality);
  m.train_max_len = n;
  m.temporal_average = false;
  c.modalities = {m};
  return c;
}

/// Record i of a split is subsampled with derive(seed, n, split_tag·2^32 + i).
inline std::vector<SweepResult> run_frames_sweep(const SweepConfig& cfg, const DataSplits& data,
                                                 std::uint64_t seed,
                                                 const std::function<void(const SweepResult&)>& on_row = {}) {
  std::vector<SweepResult> results;
  for (std::size_t n : cfg.frame_counts) {
    auto sampler = [&, n](std::uint64_t tag) {
      return [&, n, tag](const VideoRecord& r, std::size_t i) {
        SeededRng rng = SeededRng::derive(seed, n, (tag << 32) + i);
        return subsample_frames(r, cfg.modality, n, rng);
      };
    };
    TransformSource train(*data.train, sampler(1));
    std::optional<TransformSource> val, test;
    if (data.val) val.emplace(*data.val, sampler(2));
    if (data.test) test.emplace(*data.test, sampler(3));
    const DataSplits sub{&train, val ? &*val : nullptr, test ? &*test : nullptr};
    for (const auto* which : {&cfg.mlp, &cfg.transformer}) {
      TrainConfig tc = *which;
      tc.model = sweep_model_config(which->model, cfg.modality, n);
      const std::string name = which == &cfg.mlp ? "mlp" : "transformer";
      if (!tc.checkpoint_dir.empty()) tc.checkpoint_dir += "/frames-" + std::to_string(n) + "-" + name;
      SweepResult r{n, name, 0.0, 0.0, train_and_test(tc, sub)};
      r.test_map = r.run.test.mean_ap;
      r.best_val_map = r.run.history.best_map;
      results.push_back(std::move(r));
      if (on_row) on_row(results.back());
    }
  }
  return results;
}

inline std::string sweep_csv(const std::vector<SweepResult>& results) {
  std::ostringstream os;
  os.precision(6);
  os << "frames,model,test_mAP,val_mAP\n";
  for (const auto& r : results)
    os << r.frames << ',' << r.model << ',' << r.test_map * 100.0 << ',' << r.best_val_map * 100.0 << '\n';
  return os.str();
}

}  // namespace mmgenre
