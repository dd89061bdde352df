// SPDX-License-Identifier: Apache-2.0
// mmgenre: command-line front end.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmgenre/mmgenre.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmgenre;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigFailure = 2, kDataFailure = 3, kNumericFailure = 4 };

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out = ".";
  unsigned threads = 1;
  std::vector<std::string> argv;
};

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

/// TrainConfig from --config (or defaults), then --seed.
TrainConfig resolve_train_config(const Globals& g, const std::optional<std::string>& preset_override) {
  json doc = g.config_path.empty() ? json::object() : read_json_file(g.config_path);
  TrainConfig c;
  try {
    c = doc.get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  // A preset swaps the architecture and its sizes; modalities and training knobs stay.
  if (preset_override) {
    const ModelConfig p = preset(parse_architecture(*preset_override));
    c.model.architecture = p.architecture;
    c.model.model_dim = p.model_dim;
    c.model.layers = p.layers;
    c.model.heads = p.heads;
    c.model.validate();
  }
  if (g.seed) c.seed = *g.seed;
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// run.json: everything needed to repeat the command.
void write_run_manifest(const Globals& g, const std::string& command, json config, json outputs) {
  json doc = {{"command", command},
              {"argv", g.argv},
              {"seed", g.seed ? json(*g.seed) : json(nullptr)},
              {"threads", g.threads},
              {"config_file", g.config_path.empty() ? json(nullptr) : json(g.config_path)},
              {"resolved_config", std::move(config)},
              {"outputs", std::move(outputs)},
              {"started_utc", utc_now()}};
  write_text(fs::path(g.out) / "run.json", doc.dump(2) + "\n");
}

struct LoadedData {
  Manifest manifest;
  FilterStats filter;
  SplitAssignment assignment;
  std::optional<ManifestSource> train, val, test, all;

  const RecordSource& split(Split s) const {
    return s == Split::kTrain ? *train : s == Split::kVal ? *val : *test;
  }
};

LoadedData load_data(const std::string& manifest_path, bool filter, DurationBounds bounds = {}) {
  LoadedData d;
  d.manifest = load_manifest(manifest_path);
  auto entries = d.manifest.samples;
  if (filter) entries = filter_by_duration(entries, &d.filter, bounds);
  if (entries.empty()) throw DataError("no samples left in " + manifest_path);
  d.assignment = split_items(entries);
  d.train.emplace(d.manifest, select_split(entries, d.assignment, Split::kTrain));
  d.val.emplace(d.manifest, select_split(entries, d.assignment, Split::kVal));
  d.test.emplace(d.manifest, select_split(entries, d.assignment, Split::kTest));
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  d.all.emplace(d.manifest, entries);
  std::cerr << "data: " << d.manifest.samples.size() << " samples";
  if (filter) std::cerr << ", " << d.filter.kept << " within duration bounds (" << d.filter.dropped
                        << " outside, " << d.filter.missing_duration << " without duration)";
  std::cerr << "; split " << d.train->size() << " / " << d.val->size() << " / " << d.test->size() << '\n';
  if (d.manifest.dropped_genre_labels)
    std::cerr << "warning: " << d.manifest.dropped_genre_labels << " genre labels outside the vocabulary dropped\n";
  return d;
}

json split_summary(const LoadedData& d) {
  return {{"train", d.train->size()}, {"val", d.val->size()}, {"test", d.test->size()},
          {"filtered_out", d.filter.dropped}, {"missing_duration", d.filter.missing_duration}};
}

void emit_report(const MetricsReport& r, const fs::path& dir, const std::string& stem) {
  write_text(dir / (stem + ".csv"), metrics_csv(r));
  write_text(dir / (stem + ".txt"), metrics_table(r));
  write_text(dir / (stem + ".json"), metrics_json(r).dump(2) + "\n");
  std::cout << metrics_table(r);
}

// ---- commands -------------------------------------------------------------

struct ImportArgs {
  std::string npy_dir, manifest;
};

int cmd_import(const Globals& g, const ImportArgs& a) {
  if (!fs::is_directory(a.npy_dir)) throw DataError("not a directory: " + a.npy_dir);
  if (fs::is_empty(a.npy_dir)) throw DataError("no feature arrays in " + a.npy_dir);
  const Manifest source = load_manifest(a.manifest);
  const TrainConfig cfg = resolve_train_config(g, std::nullopt);
  const auto summary = import_npy(a.npy_dir, source, g.out, cfg.model.modalities);
  for (const auto& e : summary.errors) std::cerr << "error: " << e << '\n';
  std::cout << "imported " << summary.imported << " of " << source.samples.size() << " samples";
  if (summary.failed) std::cout << " (" << summary.failed << " failed)";
  std::cout << '\n';
  write_run_manifest(g, "import", {{"npy_dir", a.npy_dir}, {"manifest", a.manifest}, {"modalities", cfg.model.modalities}},
                     {{"manifest", (fs::path(g.out) / "manifest.json").string()},
                      {"imported", summary.imported},
                      {"failed", summary.failed}});
  if (summary.imported == 0) throw DataError("no sample could be imported");
  return kOk;
}

struct SynthArgs {
  std::string kind = "mean";
  std::size_t n = 64;
  double noise_std = 0.1;
  std::size_t min_length = 64, max_length = 128;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  const TrainConfig cfg = resolve_train_config(g, std::nullopt);
  const std::uint64_t seed = cfg.seed;
  std::vector<VideoRecord> records;
  json resolved = {{"kind", a.kind}, {"n", a.n}, {"seed", seed}};
  if (a.kind == "mean") {
    MeanEncodedOptions opt;
    opt.specs = cfg.model.modalities;
    records = synth_mean_encoded(a.n, seed, a.noise_std, opt);
    resolved["noise_std"] = a.noise_std;
    resolved["modalities"] = opt.specs;
  } else if (a.kind == "order") {
    OrderEncodedOptions opt;
    const ModalitySpec* clip = cfg.model.find("clip");
    if (clip) opt.spec = *clip;
    opt.min_length = a.min_length;
    opt.max_length = a.max_length;
    records = synth_order_encoded(a.n, seed, opt);
    resolved["modality"] = opt.spec;
    resolved["min_length"] = opt.min_length;
    resolved["max_length"] = opt.max_length;
  } else {
    throw ConfigError("unknown synthetic kind '" + a.kind + "' (expected mean or order)");
  }
  fs::create_directories(g.out);
  Manifest m;
  for (const auto& r : records) {
    const std::string rel = r.id + ".mmf";
    mmf::write(r, fs::path(g.out) / rel);
    m.samples.push_back({r.id, r.duration_s, r.genres, rel});
  }
  save_manifest(m, fs::path(g.out) / "manifest.json");
  std::cout << "wrote " << records.size() << " records to " << g.out << '\n';
  write_run_manifest(g, "synth", resolved, {{"manifest", (fs::path(g.out) / "manifest.json").string()}});
  return kOk;
}

struct TrainArgs {
  std::string data;
  std::optional<std::string> preset;
  std::optional<std::size_t> epochs, max_steps;
  bool no_filter = false;
  std::string resume;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  TrainConfig cfg = resolve_train_config(g, a.preset);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.max_steps) cfg.max_steps = *a.max_steps;
  const fs::path out(g.out);
  cfg.checkpoint_dir = (out / "checkpoints").string();
  const LoadedData d = load_data(a.data, !a.no_filter);
  FusionModel<float> model(cfg.model, cfg.seed);
  std::cerr << "model: " << to_string(cfg.model.architecture) << ", " << model.parameters().total_parameter_count()
            << " parameters\n";
  write_run_manifest(g, "train", cfg, {{"data", a.data}, {"splits", split_summary(d)}});
  Trainer<float> trainer(cfg, model, *d.train, d.val->size() ? &*d.val : nullptr);
  if (!a.resume.empty()) trainer.resume(a.resume);
  const TrainHistory& h = trainer.run();
  trainer.restore_best();
  save_checkpoint(model, out / "model");
  write_text(out / "history.csv", h.csv());
  json outputs = {{"data", a.data},
                  {"splits", split_summary(d)},
                  {"model", (out / "model.json").string()},
                  {"history", (out / "history.csv").string()},
                  {"steps", h.losses.size()},
                  {"parameter_count", model.parameters().total_parameter_count()},
                  {"best_val_mAP", h.best_step ? json(h.best_map) : json(nullptr)},
                  {"best_step", h.best_step ? json(*h.best_step) : json(nullptr)}};
  if (d.val->size()) {
    const auto report = evaluate(model, *d.val, cfg.model.threshold);
    std::cout << "validation (" << d.val->size() << " samples):\n";
    emit_report(report, out, "val_metrics");
  }
  write_run_manifest(g, "train", cfg, outputs);
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test";
  double threshold = 0.5;
  bool no_filter = false;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const auto model = load_model<float>(a.checkpoint);
  const LoadedData d = load_data(a.data, !a.no_filter);
  const RecordSource& records = a.split == "all" ? *d.all : d.split(parse_split(a.split));
  if (records.size() == 0) throw DataError("split '" + a.split + "' is empty");
  const auto report = evaluate(model, records, a.threshold);
  std::cout << a.split << " (" << records.size() << " samples):\n";
  emit_report(report, g.out, "metrics");
  write_run_manifest(g, "eval",
                     {{"checkpoint", a.checkpoint}, {"data", a.data}, {"split", a.split},
                      {"threshold", a.threshold}, {"model", model.config()}},
                     {{"metrics", (fs::path(g.out) / "metrics.csv").string()}, {"mAP", report.mean_ap},
                      {"samples", records.size()}});
  return kOk;
}

struct PredictArgs {
  std::string checkpoint, data, split = "test";
  std::vector<std::string> ids;
  double threshold = 0.5;
  bool no_filter = false;
};

int cmd_predict(const Globals& g, const PredictArgs& a) {
  const auto model = load_model<float>(a.checkpoint);
  std::vector<std::shared_ptr<const VideoRecord>> records;
  if (!a.ids.empty()) {
    const Manifest m = load_manifest(a.data);
    for (const auto& id : a.ids) {
      auto it = std::find_if(m.samples.begin(), m.samples.end(), [&](const auto& e) { return e.id == id; });
      if (it == m.samples.end()) throw DataError("no sample with id " + id);
      records.push_back(std::make_shared<const VideoRecord>(load_record(m, *it)));
    }
  } else {
    const LoadedData d = load_data(a.data, !a.no_filter);
    const RecordSource& src = a.split == "all" ? *d.all : d.split(parse_split(a.split));
    for (std::size_t i = 0; i < src.size(); ++i) records.push_back(src.get(i));
  }
  std::ostringstream csv;
  csv.precision(6);
  csv << "id";
  for (auto genre : kGenres) csv << ',' << genre;
  csv << ",predicted\n";
  for (const auto& r : records) {
    const Prediction p = predict(model, *r, a.threshold);
    std::string positives;
    csv << r->id;
    for (std::size_t c = 0; c < kNumGenres; ++c) {
      csv << ',' << p.probabilities[c];
      if (p.decisions[c]) positives += (positives.empty() ? "" : ";") + std::string(kGenres[c]);
    }
    csv << ',' << positives << '\n';
    std::cout << r->id << ": " << (positives.empty() ? "(none)" : positives) << '\n';
  }
  write_text(fs::path(g.out) / "predictions.csv", csv.str());
  write_run_manifest(g, "predict",
                     {{"checkpoint", a.checkpoint}, {"data", a.data}, {"threshold", a.threshold},
                      {"ids", a.ids}, {"split", a.ids.empty() ? json(a.split) : json(nullptr)}},
                     {{"predictions", (fs::path(g.out) / "predictions.csv").string()}, {"count", records.size()}});
  return kOk;
}

struct ExperimentArgs {
  std::string data;
  bool no_filter = false;
  std::optional<std::size_t> epochs, max_steps;
  std::vector<std::size_t> frames;
};

int cmd_ablate(const Globals& g, const ExperimentArgs& a) {
  TrainConfig cfg = resolve_train_config(g, std::nullopt);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.max_steps) cfg.max_steps = *a.max_steps;
  for (const auto& name : {"clip", "musicnet", "audiotag", "ocr", "asr"})
    if (!cfg.model.find(name)) throw ConfigError(std::string("ablation needs modality ") + name + " in the config");
  const LoadedData d = load_data(a.data, !a.no_filter);
  const fs::path out(g.out);
  write_run_manifest(g, "ablate", cfg, {{"data", a.data}, {"splits", split_summary(d)}});
  const auto results = run_ablation(cfg, {&*d.train, &*d.val, &*d.test}, [](const AblationResult& r) {
    std::cout << r.row.label << ": test mAP " << r.test_map * 100.0 << " (reference " << r.row.reference_map
              << ")" << std::endl;
  });
  write_text(out / "ablation.csv", ablation_csv(results));
  json rows = json::array();
  for (const auto& r : results) rows.push_back({{"row", r.row.label}, {"seed", r.seed}, {"test_mAP", r.test_map}});
  write_run_manifest(g, "ablate", cfg,
                     {{"data", a.data}, {"splits", split_summary(d)},
                      {"ablation", (out / "ablation.csv").string()}, {"rows", rows}});
  return kOk;
}

int cmd_frames_sweep(const Globals& g, const ExperimentArgs& a) {
  const json doc = g.config_path.empty() ? json::object() : read_json_file(g.config_path);
  const TrainConfig base = resolve_train_config(g, std::nullopt);
  SweepConfig sweep;
  sweep.mlp = sweep.transformer = base;
  try {
    sweep.mlp.model = doc.contains("mlp_model") ? doc["mlp_model"].get<ModelConfig>() : preset(Architecture::kMlp);
    sweep.transformer.model = doc.contains("transformer_model") ? doc["transformer_model"].get<ModelConfig>()
                                                                : preset(Architecture::kSingleTransformer);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid sweep model config: ") + e.what());
  }
  for (auto* tc : {&sweep.mlp, &sweep.transformer}) {
    if (const ModalitySpec* clip = base.model.find("clip")) tc->model.modalities = {*clip};
    if (a.epochs) tc->epochs = *a.epochs;
    if (a.max_steps) tc->max_steps = *a.max_steps;
  }
  if (!a.frames.empty()) sweep.frame_counts = a.frames;
  const LoadedData d = load_data(a.data, !a.no_filter);
  const fs::path out(g.out);
  const json resolved = {{"mlp", sweep.mlp}, {"transformer", sweep.transformer}, {"frames", sweep.frame_counts},
                         {"modality", sweep.modality}, {"seed", base.seed}};
  write_run_manifest(g, "frames-sweep", resolved, {{"data", a.data}, {"splits", split_summary(d)}});
  const auto results = run_frames_sweep(sweep, {&*d.train, &*d.val, &*d.test}, base.seed, [](const SweepResult& r) {
    std::cout << r.frames << " frames, " << r.model << ": test mAP " << r.test_map * 100.0 << std::endl;
  });
  write_text(out / "frames_sweep.csv", sweep_csv(results));
  write_run_manifest(g, "frames-sweep", resolved,
                     {{"data", a.data}, {"splits", split_summary(d)}, {"sweep", (out / "frames_sweep.csv").string()}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal movie-trailer genre classifier"};
  app.require_subcommand(1);
  Globals g;
  g.argv.assign(argv, argv + argc);
  app.add_option("--seed", g.seed, "Random seed (overrides the config's)");
  app.add_option("--config", g.config_path, "Training/model config JSON")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for matrix kernels")->capture_default_str()->check(
      CLI::PositiveNumber);

  ImportArgs ia;
  auto* import = app.add_subcommand("import", "Convert per-video NPY arrays to MMF files and a manifest");
  import->add_option("--npy-dir", ia.npy_dir, "Directory of <id>/<modality>.npy arrays")->required();
  import->add_option("--manifest", ia.manifest, "Source manifest (ids, durations, genres)")->required();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--kind", sa.kind, "mean or order")->capture_default_str();
  synth->add_option("-n,--n", sa.n, "Number of records")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--noise-std", sa.noise_std, "Per-frame noise (mean kind)")->capture_default_str();
  synth->add_option("--min-length", sa.min_length, "Shortest sequence (order kind)")->capture_default_str();
  synth->add_option("--max-length", sa.max_length, "Longest sequence (order kind)")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a classifier");
  train->add_option("--data", ta.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--preset", ta.preset, "mlp, single_transformer or multi_transformer");
  train->add_option("--epochs", ta.epochs, "Override epochs");
  train->add_option("--max-steps", ta.max_steps, "Override step limit");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint written by train");
  train->add_flag("--no-filter", ta.no_filter, "Skip the duration filter");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint path")->required();
  eval->add_option("--data", ea.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", ea.split, "train, val, test or all")->capture_default_str();
  eval->add_option("--threshold", ea.threshold, "Decision threshold")->capture_default_str();
  eval->add_flag("--no-filter", ea.no_filter, "Skip the duration filter");

  PredictArgs pa;
  auto* predict_cmd = app.add_subcommand("predict", "Genre probabilities for individual videos");
  predict_cmd->add_option("--checkpoint", pa.checkpoint, "Checkpoint path")->required();
  predict_cmd->add_option("--data", pa.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--id", pa.ids, "Sample id (repeatable); default: every sample of --split");
  predict_cmd->add_option("--split", pa.split, "train, val, test or all")->capture_default_str();
  predict_cmd->add_option("--threshold", pa.threshold, "Decision threshold")->capture_default_str();
  predict_cmd->add_flag("--no-filter", pa.no_filter, "Skip the duration filter");

  ExperimentArgs xa;
  auto* ablate = app.add_subcommand("ablate", "Feature-set ablation (seven rows)");
  auto* sweep = app.add_subcommand("frames-sweep", "Test mAP against number of sampled frames");
  for (auto* sub : {ablate, sweep}) {
    sub->add_option("--data", xa.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
    sub->add_option("--epochs", xa.epochs, "Override epochs");
    sub->add_option("--max-steps", xa.max_steps, "Override step limit");
    sub->add_flag("--no-filter", xa.no_filter, "Skip the duration filter");
  }
  sweep->add_option("--frames", xa.frames, "Frame counts (default 8 16 32 64 128 256)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  kernels::set_threads(g.threads);
  try {
    fs::create_directories(g.out);
    if (*import) return cmd_import(g, ia);
    if (*synth) return cmd_synth(g, sa);
    if (*train) return cmd_train(g, ta);
    if (*eval) return cmd_eval(g, ea);
    if (*predict_cmd) return cmd_predict(g, pa);
    if (*ablate) return cmd_ablate(g, xa);
    if (*sweep) return cmd_frames_sweep(g, xa);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
