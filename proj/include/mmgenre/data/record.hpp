// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmgenre/model/config.hpp"
#include "mmgenre/tensor.hpp"

namespace mmgenre {

/// One modality of one video: T × D, row t is time step t.
using FeatureSequence = Tensor<float>;

inline FeatureSequence empty_sequence(std::size_t dim) { return FeatureSequence({0, dim}); }

struct VideoRecord {
  std::string id;
  std::optional<double> duration_s;
  std::vector<std::string> genres;
  std::map<std::string, FeatureSequence> features;  // keyed by modality name

  std::size_t length(const std::string& modality) const {
    auto it = features.find(modality);
    return it == features.end() ? 0 : it->second.dim(0);
  }
};

/// Multi-hot label row over the genre vocabulary.
inline std::vector<float> label_row(const VideoRecord& r) {
  std::vector<float> row(kNumGenres, 0.0f);
  for (const auto& g : r.genres)
    if (auto i = genre_index(g)) row[*i] = 1.0f;
  return row;
}

/// Checks every feature's rank and width against the specs.
inline void validate_record(const VideoRecord& r, const std::vector<ModalitySpec>& specs) {
  if (r.genres.empty()) throw DataError("record " + r.id + " has no genre");
  for (const auto& m : specs) {
    auto it = r.features.find(m.name);
    if (it == r.features.end()) throw DataError("record " + r.id + " lacks modality " + m.name);
    const auto& f = it->second;
    if (f.rank() != 2 || f.dim(1) != m.input_dim)
      throw DataError("record " + r.id + " modality " + m.name + " has shape " +
                      shape_str(f.shape()) + ", expected (T x " + std::to_string(m.input_dim) + ")");
  }
}

}  // namespace mmgenre
