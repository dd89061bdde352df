// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint = <stem>.json metadata + <stem>.bin parameter blob.
//
// The JSON document holds the format version, model config, genre
// vocabulary, and a parameter manifest of {name, shape, offset} where
// offset is the byte offset into the blob. The blob is little-endian
// float32 in manifest order. Optional sections: "optimizer" (Adam moments,
// stored in the same blob after the parameters, plus per-parameter step
// counts) and "training_state" (free-form JSON used for resumption).

#include <bit>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmgenre/model/fusion.hpp"

namespace mmgenre {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointPaths {
  std::filesystem::path json;
  std::filesystem::path blob;

  /// Accepts "dir/stem", "dir/stem.json" or "dir/stem.bin".
  static CheckpointPaths from(std::filesystem::path p) {
    if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
    return {std::filesystem::path(p).concat(".json"), std::filesystem::path(p).concat(".bin")};
  }
};

namespace detail {

template <class T>
void append_floats(std::vector<std::uint8_t>& blob, const Tensor<T>& t) {
  for (T v : t.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) blob.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
}

template <class T>
void read_floats(const std::vector<std::uint8_t>& blob, std::size_t offset, Tensor<T>& t) {
  if (offset + t.size() * 4 > blob.size())
    throw FormatError("checkpoint blob too short for tensor", offset);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(blob[offset + 4 * i + b]) << (8 * b);
    t[i] = static_cast<T>(std::bit_cast<float>(bits));
  }
}

}  // namespace detail

template <class T>
void save_checkpoint(const FusionModel<T>& model, const std::filesystem::path& where,
                     bool with_optimizer = false, const nlohmann::json& training_state = nullptr) {
  const auto paths = CheckpointPaths::from(where);
  if (paths.json.has_parent_path()) std::filesystem::create_directories(paths.json.parent_path());
  std::vector<std::uint8_t> blob;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& e : model.parameters().entries()) {
    params.push_back({{"name", e.name}, {"shape", e.param.shape()}, {"offset", blob.size()}});
    detail::append_floats(blob, e.param.value());
  }
  nlohmann::json doc = {{"format", "mmgenre-checkpoint"},
                        {"format_version", kCheckpointVersion},
                        {"config", model.config()},
                        {"genres", genre_vocabulary()},
                        {"parameter_count", model.parameters().total_parameter_count()},
                        {"blob", paths.blob.filename().string()},
                        {"parameters", params}};
  if (with_optimizer) {
    nlohmann::json opt = nlohmann::json::array();
    for (const auto& e : model.parameters().entries()) {
      opt.push_back({{"name", e.name}, {"step", e.step}, {"first_moment_offset", blob.size()}});
      detail::append_floats(blob, e.first_moment);
      opt.back()["second_moment_offset"] = blob.size();
      detail::append_floats(blob, e.second_moment);
    }
    doc["optimizer"] = opt;
  }
  if (!training_state.is_null()) doc["training_state"] = training_state;
  {
    std::ofstream os(paths.blob, std::ios::binary | std::ios::trunc);
    os.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!os) throw DataError("failed writing " + paths.blob.string());
  }
  std::ofstream os(paths.json, std::ios::trunc);
  os << doc.dump(2) << '\n';
  if (!os) throw DataError("failed writing " + paths.json.string());
}

inline nlohmann::json read_checkpoint_metadata(const std::filesystem::path& where) {
  const auto paths = CheckpointPaths::from(where);
  std::ifstream is(paths.json);
  if (!is) throw DataError("cannot open checkpoint " + paths.json.string());
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + paths.json.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "mmgenre-checkpoint" ||
      doc.value("format_version", 0) != kCheckpointVersion)
    throw DataError("unsupported checkpoint format in " + paths.json.string());
  if (doc.at("genres").get<std::vector<std::string>>() != genre_vocabulary())
    throw DataError("checkpoint genre vocabulary differs from the 21-genre vocabulary");
  return doc;
}

/// Restores parameter values (and Adam state when present and requested)
/// into a model built from the same config.
template <class T>
void load_parameters(FusionModel<T>& model, const std::filesystem::path& where,
                     bool with_optimizer = false) {
  const auto paths = CheckpointPaths::from(where);
  const nlohmann::json doc = read_checkpoint_metadata(where);
  if (doc.at("config").get<ModelConfig>() != model.config())
    throw ConfigError("checkpoint config does not match the model");
  std::ifstream is(paths.blob, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint blob " + paths.blob.string());
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  auto& entries = model.parameters().entries();
  const auto& params = doc.at("parameters");
  if (params.size() != entries.size())
    throw ConfigError("checkpoint has " + std::to_string(params.size()) + " parameters, model has " +
                      std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (params[i].at("name") != e.name || params[i].at("shape").get<Shape>() != e.param.shape())
      throw ConfigError("checkpoint parameter " + params[i].at("name").get<std::string>() +
                        " does not match model parameter " + e.name);
    detail::read_floats(blob, params[i].at("offset").get<std::size_t>(), e.param.mutable_value());
  }
  if (!with_optimizer) return;
  if (!doc.contains("optimizer")) throw DataError("checkpoint has no optimizer state");
  const auto& opt = doc["optimizer"];
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (opt[i].at("name") != e.name) throw ConfigError("optimizer state order mismatch");
    e.step = opt[i].at("step").get<std::uint64_t>();
    detail::read_floats(blob, opt[i].at("first_moment_offset").get<std::size_t>(), e.first_moment);
    detail::read_floats(blob, opt[i].at("second_moment_offset").get<std::size_t>(), e.second_moment);
  }
}

/// Builds the model described by a checkpoint and loads its parameters.
template <class T = float>
FusionModel<T> load_model(const std::filesystem::path& where) {
  const nlohmann::json doc = read_checkpoint_metadata(where);
  FusionModel<T> model(doc.at("config").get<ModelConfig>(), 0);
  load_parameters(model, where);
  return model;
}

}  // namespace mmgenre
