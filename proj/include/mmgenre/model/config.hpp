// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmgenre/error.hpp"

namespace mmgenre {

inline constexpr std::size_t kNumGenres = 21;

/// The fixed, ordered genre vocabulary. Serialized with every checkpoint
/// and manifest; order defines the label columns.
inline constexpr std::array<std::string_view, kNumGenres> kGenres = {
    "Action", "Adventure", "Animation", "Biography", "Comedy",  "Crime",    "Documentary",
    "Drama",  "Family",    "Fantasy",   "History",   "Horror",  "Music",    "Musical",
    "Mystery", "Romance",  "Sci-Fi",    "Sport",     "Thriller", "War",     "Western"};

inline std::optional<std::size_t> genre_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumGenres; ++i)
    if (kGenres[i] == name) return i;
  return std::nullopt;
}

inline std::vector<std::string> genre_vocabulary() {
  return {kGenres.begin(), kGenres.end()};
}

struct ModalitySpec {
  std::string name;
  std::size_t input_dim = 0;
  std::size_t train_max_len = 0;
  bool temporal_average = false;

  friend bool operator==(const ModalitySpec&, const ModalitySpec&) = default;
};

/// Feature streams in canonical fusion order with their extractor output
/// widths and training sequence lengths.
inline std::vector<ModalitySpec> standard_modalities() {
  return {{"clip", 512, 216, false},
          {"ocr", 768, 64, false},
          {"asr", 768, 86, false},
          {"audiotag", 128, 140, false},
          {"musicnet", 64, 18, false}};
}

inline ModalitySpec standard_modality(std::string_view name) {
  for (auto& m : standard_modalities())
    if (m.name == name) return m;
  throw ConfigError("unknown modality: " + std::string(name));
}

enum class Architecture { kMlp, kSingleTransformer, kMultiTransformer };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::kMlp: return "mlp";
    case Architecture::kSingleTransformer: return "single_transformer";
    case Architecture::kMultiTransformer: return "multi_transformer";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "mlp") return Architecture::kMlp;
  if (s == "single_transformer" || s == "single") return Architecture::kSingleTransformer;
  if (s == "multi_transformer" || s == "multi") return Architecture::kMultiTransformer;
  throw ConfigError("unknown architecture: " + std::string(s));
}

struct ModelConfig {
  Architecture architecture = Architecture::kMultiTransformer;
  std::size_t model_dim = 128;
  std::size_t layers = 1;
  std::size_t heads = 8;
  double dropout = 0.5;
  std::vector<ModalitySpec> modalities = standard_modalities();
  double positive_weight = 0.25;
  double threshold = 0.5;

  bool is_transformer() const { return architecture != Architecture::kMlp; }

  const ModalitySpec* find(std::string_view name) const {
    for (auto& m : modalities)
      if (m.name == name) return &m;
    return nullptr;
  }

  void validate() const {
    if (modalities.empty()) throw ConfigError("at least one modality must be enabled");
    for (std::size_t i = 0; i < modalities.size(); ++i) {
      const auto& m = modalities[i];
      if (m.name.empty() || m.name.size() > 255) throw ConfigError("bad modality name");
      if (m.input_dim == 0) throw ConfigError("modality " + m.name + " has zero input_dim");
      if (m.train_max_len == 0) throw ConfigError("modality " + m.name + " has zero train_max_len");
      for (std::size_t j = 0; j < i; ++j)
        if (modalities[j].name == m.name) throw ConfigError("modality listed twice: " + m.name);
    }
    if (model_dim == 0 || layers == 0) throw ConfigError("model_dim and layers must be positive");
    if (is_transformer() && (heads == 0 || model_dim % heads != 0))
      throw ConfigError("model_dim " + std::to_string(model_dim) + " not divisible by heads " +
                        std::to_string(heads));
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(positive_weight > 0.0)) throw ConfigError("positive_weight must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Presets: mlp(1 hidden layer, dim 256); single(2 layers, 8 heads, dim 256);
/// multi(1 layer per modality, 8 heads, dim 128).
inline ModelConfig preset(Architecture a) {
  ModelConfig c;
  c.architecture = a;
  switch (a) {
    case Architecture::kMlp:
      c.model_dim = 256;
      c.layers = 1;
      c.heads = 1;
      break;
    case Architecture::kSingleTransformer:
      c.model_dim = 256;
      c.layers = 2;
      c.heads = 8;
      break;
    case Architecture::kMultiTransformer:
      c.model_dim = 128;
      c.layers = 1;
      c.heads = 8;
      break;
  }
  return c;
}

inline void to_json(nlohmann::json& j, const ModalitySpec& m) {
  j = {{"name", m.name},
       {"input_dim", m.input_dim},
       {"train_max_len", m.train_max_len},
       {"temporal_average", m.temporal_average}};
}

inline void from_json(const nlohmann::json& j, ModalitySpec& m) {
  m.name = j.at("name").get<std::string>();
  // Known modality names default to their standard widths and lengths.
  std::optional<ModalitySpec> base;
  for (auto& p : standard_modalities())
    if (p.name == m.name) base = p;
  m.input_dim = j.contains("input_dim") ? j["input_dim"].get<std::size_t>()
                                        : (base ? base->input_dim : 0);
  m.train_max_len = j.contains("train_max_len") ? j["train_max_len"].get<std::size_t>()
                                                : (base ? base->train_max_len : 0);
  m.temporal_average = j.value("temporal_average", false);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"architecture", to_string(c.architecture)},
       {"model_dim", c.model_dim},
       {"layers", c.layers},
       {"heads", c.heads},
       {"dropout", c.dropout},
       {"modalities", c.modalities},
       {"positive_weight", c.positive_weight},
       {"threshold", c.threshold}};
}

/// Starts from the architecture's preset; explicit fields override it.
/// Modalities may be given as names or as full objects.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  const std::string arch = j.contains("architecture") ? j["architecture"].get<std::string>()
                                                      : j.value("preset", std::string("multi_transformer"));
  c = preset(parse_architecture(arch));
  if (j.contains("model_dim")) c.model_dim = j["model_dim"].get<std::size_t>();
  if (j.contains("layers")) c.layers = j["layers"].get<std::size_t>();
  if (j.contains("heads")) c.heads = j["heads"].get<std::size_t>();
  if (j.contains("dropout")) c.dropout = j["dropout"].get<double>();
  if (j.contains("positive_weight")) c.positive_weight = j["positive_weight"].get<double>();
  if (j.contains("threshold")) c.threshold = j["threshold"].get<double>();
  if (j.contains("modalities")) {
    c.modalities.clear();
    for (const auto& m : j["modalities"]) {
      if (m.is_string()) c.modalities.push_back(standard_modality(m.get<std::string>()));
      else c.modalities.push_back(m.get<ModalitySpec>());
    }
  }
  if (j.contains("average")) {
    for (const auto& name : j["average"]) {
      bool found = false;
      for (auto& m : c.modalities)
        if (m.name == name.get<std::string>()) m.temporal_average = found = true;
      if (!found) throw ConfigError("cannot average disabled modality " + name.get<std::string>());
    }
  }
}

}  // namespace mmgenre
