// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmgenre/data/mmf.hpp"
#include "mmgenre/data/npy.hpp"
#include "mmgenre/data/record.hpp"

namespace mmgenre {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string id;
  std::optional<double> duration_s;
  std::vector<std::string> genres;
  std::string path;  // relative to the manifest's directory
};

struct Manifest {
  std::vector<std::string> genres = genre_vocabulary();
  std::vector<ManifestEntry> samples;
  fs::path base_dir;
  std::size_t dropped_genre_labels = 0;  // labels outside the vocabulary, dropped on load
};

inline nlohmann::json manifest_json(const Manifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    nlohmann::json row = {{"id", s.id}, {"genres", s.genres}, {"path", s.path}};
    row["duration_s"] = s.duration_s ? nlohmann::json(*s.duration_s) : nlohmann::json(nullptr);
    samples.push_back(std::move(row));
  }
  return {{"genres", m.genres}, {"samples", samples}};
}

inline Manifest parse_manifest_unchecked(const nlohmann::json& j, fs::path base_dir) {
  Manifest m;
  m.base_dir = std::move(base_dir);
  if (j.contains("genres")) {
    const auto genres = j["genres"].get<std::vector<std::string>>();
    if (genres != genre_vocabulary())
      throw DataError("manifest genre vocabulary differs from the 21-genre vocabulary");
  }
  std::set<std::string> seen;
  for (const auto& row : j.at("samples")) {
    ManifestEntry e;
    e.id = row.at("id").get<std::string>();
    if (!seen.insert(e.id).second) throw DataError("duplicate sample id in manifest: " + e.id);
    if (row.contains("duration_s") && !row["duration_s"].is_null())
      e.duration_s = row["duration_s"].get<double>();
    for (const auto& g : row.value("genres", nlohmann::json::array())) {
      const auto name = g.get<std::string>();
      if (genre_index(name)) e.genres.push_back(name);
      else ++m.dropped_genre_labels;
    }
    e.path = row.value("path", e.id + ".mmf");
    m.samples.push_back(std::move(e));
  }
  return m;
}

/// Parses a manifest document. The genre list must equal the fixed
/// vocabulary; sample genres outside it are dropped and counted.
inline Manifest parse_manifest(const nlohmann::json& j, fs::path base_dir = {}) {
  try {
    return parse_manifest_unchecked(j, std::move(base_dir));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

inline Manifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  return parse_manifest(j, path.parent_path());
}

inline void save_manifest(const Manifest& m, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  os << manifest_json(m).dump(2) << '\n';
}

struct FilterStats {
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::size_t missing_duration = 0;
};

struct DurationBounds {
  double lower = 19.6;
  double upper = 214.4;
};

/// Keeps entries with lower ≤ duration_s ≤ upper. Entries without a duration
/// are dropped and counted separately.
template <class Item>
std::vector<Item> filter_by_duration(const std::vector<Item>& items, FilterStats* stats = nullptr,
                                     DurationBounds bounds = {}) {
  std::vector<Item> out;
  FilterStats st;
  for (const auto& it : items) {
    if (!it.duration_s) {
      ++st.missing_duration;
      continue;
    }
    if (*it.duration_s >= bounds.lower && *it.duration_s <= bounds.upper) out.push_back(it);
    else ++st.dropped;
  }
  st.kept = out.size();
  if (stats) *stats = st;
  return out;
}

enum class Split { kTrain, kVal, kTest };

inline std::string to_string(Split s) {
  return s == Split::kTrain ? "train" : s == Split::kVal ? "val" : "test";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val" || s == "validation") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split: " + s);
}

using SplitAssignment = std::map<std::string, Split>;

/// Sorts ids by byte order; the first ⌊0.7n⌋ go to train, the next ⌊0.1n⌋ to
/// validation, the remainder to test.
inline SplitAssignment split_dataset(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw DataError("duplicate id in split input: " + *std::adjacent_find(ids.begin(), ids.end()));
  const std::size_t n = ids.size();
  const std::size_t n_train = n * 7 / 10, n_val = n / 10;
  SplitAssignment out;
  for (std::size_t i = 0; i < n; ++i)
    out[ids[i]] = i < n_train ? Split::kTrain : i < n_train + n_val ? Split::kVal : Split::kTest;
  return out;
}

template <class Item>
SplitAssignment split_items(const std::vector<Item>& items) {
  std::vector<std::string> ids;
  for (const auto& it : items) ids.push_back(it.id);
  return split_dataset(std::move(ids));
}

/// Items of one split, ascending by id.
template <class Item>
std::vector<Item> select_split(const std::vector<Item>& items, const SplitAssignment& assignment,
                               Split which) {
  std::vector<Item> out;
  for (const auto& it : items) {
    auto a = assignment.find(it.id);
    if (a != assignment.end() && a->second == which) out.push_back(it);
  }
  std::sort(out.begin(), out.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
  return out;
}

/// Random access to records by index; loads lazily when disk-backed.
class RecordSource {
 public:
  virtual ~RecordSource() = default;
  virtual std::size_t size() const = 0;
  virtual const std::string& id(std::size_t i) const = 0;
  virtual std::shared_ptr<const VideoRecord> get(std::size_t i) const = 0;
};

class InMemorySource : public RecordSource {
 public:
  explicit InMemorySource(std::vector<VideoRecord> records)
      : records_(std::make_shared<std::vector<VideoRecord>>(std::move(records))) {}
  std::size_t size() const override { return records_->size(); }
  const std::string& id(std::size_t i) const override { return (*records_)[i].id; }
  std::shared_ptr<const VideoRecord> get(std::size_t i) const override {
    return {records_, &(*records_)[i]};
  }
  const std::vector<VideoRecord>& records() const { return *records_; }

 private:
  std::shared_ptr<std::vector<VideoRecord>> records_;
};

inline VideoRecord load_record(const Manifest& m, const ManifestEntry& e) {
  VideoRecord r;
  r.id = e.id;
  r.duration_s = e.duration_s;
  r.genres = e.genres;
  r.features = mmf::read(m.base_dir / e.path);
  return r;
}

class ManifestSource : public RecordSource {
 public:
  ManifestSource(Manifest manifest, std::vector<ManifestEntry> entries)
      : manifest_(std::move(manifest)), entries_(std::move(entries)) {}
  std::size_t size() const override { return entries_.size(); }
  const std::string& id(std::size_t i) const override { return entries_[i].id; }
  std::shared_ptr<const VideoRecord> get(std::size_t i) const override {
    return std::make_shared<const VideoRecord>(load_record(manifest_, entries_[i]));
  }

 private:
  Manifest manifest_;
  std::vector<ManifestEntry> entries_;
};

struct ImportSummary {
  std::size_t imported = 0;
  std::size_t failed = 0;
  std::vector<std::string> errors;
};

/// Converts `<npy_dir>/<id>/<modality>.npy` arrays to `<out_dir>/<id>.mmf`
/// plus `<out_dir>/manifest.json`, for every sample of `source`. A missing
/// modality file becomes an empty (T = 0) sequence; a sample with no
/// modality file at all, or with any malformed array, is skipped and
/// reported. Arrays must be (T, D) with D equal to the modality width.
inline ImportSummary import_npy(const fs::path& npy_dir, const Manifest& source,
                                const fs::path& out_dir,
                                const std::vector<ModalitySpec>& specs = standard_modalities()) {
  ImportSummary summary;
  fs::create_directories(out_dir);
  Manifest out;
  for (const auto& e : source.samples) {
    try {
      VideoRecord r;
      r.id = e.id;
      std::size_t present = 0;
      for (const auto& spec : specs) {
        const fs::path file = npy_dir / e.id / (spec.name + ".npy");
        if (!fs::exists(file)) {
          r.features[spec.name] = empty_sequence(spec.input_dim);
          continue;
        }
        Tensor<float> seq = npy::read_matrix(file);
        if (seq.dim(1) != spec.input_dim)
          throw DataError(file.string() + ": width " + std::to_string(seq.dim(1)) +
                          " does not match modality " + spec.name + " (" +
                          std::to_string(spec.input_dim) + ")");
        if (!seq.all_finite()) throw DataError(file.string() + ": non-finite values");
        r.features[spec.name] = std::move(seq);
        ++present;
      }
      if (!present) throw DataError("no feature arrays found for " + e.id);
      const std::string rel = e.id + ".mmf";
      mmf::write(r.features, out_dir / rel);
      out.samples.push_back({e.id, e.duration_s, e.genres, rel});
      ++summary.imported;
    } catch (const std::exception& ex) {
      ++summary.failed;
      summary.errors.push_back(ex.what());
    }
  }
  save_manifest(out, out_dir / "manifest.json");
  return summary;
}

}  // namespace mmgenre
