// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmgenre/error.hpp"
#include "mmgenre/model/config.hpp"
#include "mmgenre/tensor.hpp"

namespace mmgenre {

/// Non-interpolated average precision.
///
/// Samples are ranked by descending score, ties ordered by descending index.
/// Samples with equal scores form one block, so AP is a function of the
/// scores alone: AP = Σ over blocks containing a positive of
/// ΔRecall(block) · Precision(through end of block). Without ties this is the
/// rank-sum form Σ_k (R_k − R_{k−1}) · P_k. Undefined (nullopt) without a
/// positive target.
inline std::optional<double> average_precision(std::span<const double> scores,
                                               std::span<const double> targets) {
  if (scores.size() != targets.size()) throw ShapeError("average_precision: size mismatch");
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (double t : targets) positives += t > 0.5;
  if (positives == 0) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a > b;
  });
  double ap = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i, block_pos = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) block_pos += targets[order[j++]] > 0.5;
    tp += block_pos;
    seen += j - i;
    if (block_pos)
      ap += (static_cast<double>(block_pos) / static_cast<double>(positives)) *
            (static_cast<double>(tp) / static_cast<double>(seen));
    i = j;
  }
  return ap;
}

struct PrecisionRecall {
  double precision = 0.0;            // 0 when nothing predicted positive
  std::optional<double> recall;      // undefined without actual positives
  std::size_t tp = 0, fp = 0, fn = 0;
};

/// Confusion counts for one label column; a score ≥ threshold is positive.
inline PrecisionRecall precision_recall_at(std::span<const double> scores,
                                           std::span<const double> targets, double threshold) {
  if (scores.size() != targets.size()) throw ShapeError("precision_recall_at: size mismatch");
  PrecisionRecall pr;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold, truth = targets[i] > 0.5;
    pr.tp += pred && truth;
    pr.fp += pred && !truth;
    pr.fn += !pred && truth;
  }
  if (pr.tp + pr.fp) pr.precision = static_cast<double>(pr.tp) / static_cast<double>(pr.tp + pr.fp);
  if (pr.tp + pr.fn) pr.recall = static_cast<double>(pr.tp) / static_cast<double>(pr.tp + pr.fn);
  return pr;
}

struct GenreMetrics {
  std::string genre;
  double precision = 0.0;
  std::optional<double> recall;
  std::optional<double> ap;
};

struct MetricsReport {
  double threshold = 0.5;
  std::size_t sample_count = 0;
  std::vector<GenreMetrics> genres;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double mean_ap = 0.0;
  std::size_t excluded_recall = 0;  // genres without positives, left out of macro R
  std::size_t excluded_ap = 0;      // genres without positives, left out of mAP
  std::string ap_variant = "non-interpolated, tied scores grouped";
};

/// Unweighted mean over the defined per-genre APs; nullopt if none defined.
inline std::optional<double> mean_average_precision(const std::vector<std::optional<double>>& aps) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& a : aps)
    if (a) s += *a, ++n;
  if (!n) return std::nullopt;
  return s / static_cast<double>(n);
}

namespace detail {
inline std::vector<double> column(const Tensor<double>& m, std::size_t c) {
  const std::size_t N = m.dim(0), C = m.dim(1);
  std::vector<double> out(N);
  for (std::size_t i = 0; i < N; ++i) out[i] = m[i * C + c];
  return out;
}
}  // namespace detail

/// scores, targets: N × 21.
inline MetricsReport compute_metrics(const Tensor<double>& scores, const Tensor<double>& targets,
                                     double threshold) {
  if (scores.rank() != 2 || scores.shape() != targets.shape() || scores.dim(1) != kNumGenres)
    throw ShapeError("compute_metrics expects matching N x 21 scores and targets");
  if (scores.dim(0) == 0) throw DataError("metrics over an empty sample set");
  for (double t : targets.data())
    if (t != 0.0 && t != 1.0) throw DataError("targets must be 0 or 1");
  MetricsReport r;
  r.threshold = threshold;
  r.sample_count = scores.dim(0);
  std::vector<std::optional<double>> aps;
  double psum = 0.0, rsum = 0.0;
  std::size_t rcount = 0;
  for (std::size_t c = 0; c < kNumGenres; ++c) {
    const auto s = detail::column(scores, c), t = detail::column(targets, c);
    const auto pr = precision_recall_at(s, t, threshold);
    GenreMetrics g{std::string(kGenres[c]), pr.precision, pr.recall, average_precision(s, t)};
    psum += g.precision;
    if (g.recall) rsum += *g.recall, ++rcount;
    else ++r.excluded_recall;
    if (!g.ap) ++r.excluded_ap;
    aps.push_back(g.ap);
    r.genres.push_back(std::move(g));
  }
  r.macro_precision = psum / static_cast<double>(kNumGenres);
  r.macro_recall = rcount ? rsum / static_cast<double>(rcount) : 0.0;
  r.mean_ap = mean_average_precision(aps).value_or(0.0);
  return r;
}

namespace detail {
inline std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
  return buf;
}

inline std::optional<double> parse_pct(const std::string& s) {
  if (s == "-" || s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw DataError("bad number in metrics CSV: " + s);
    return v / 100.0;
  } catch (const std::logic_error&) {
    throw DataError("bad number in metrics CSV: " + s);
  }
}
}  // namespace detail

/// Per-genre CSV: header, 21 genre rows, AVERAGE row. Values are
/// percentages with two decimals; "-" marks an undefined value.
inline std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream os;
  char thr[32];
  std::snprintf(thr, sizeof thr, "%g", r.threshold);
  os << "genre,P@" << thr << ",R@" << thr << ",AP\n";
  for (const auto& g : r.genres)
    os << g.genre << ',' << detail::pct(g.precision) << ',' << detail::pct(g.recall) << ','
       << detail::pct(g.ap) << '\n';
  os << "AVERAGE," << detail::pct(r.macro_precision) << ',' << detail::pct(r.macro_recall) << ','
     << detail::pct(r.mean_ap) << '\n';
  return os.str();
}

/// Inverse of metrics_csv at the CSV's two-decimal percentage resolution.
inline MetricsReport parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("genre,P@", 0) != 0)
    throw DataError("metrics CSV: missing header");
  MetricsReport r;
  const auto comma = line.find(",R@");
  r.threshold = std::stod(line.substr(8, comma - 8));
  bool have_average = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() != 4) throw DataError("metrics CSV: expected 4 cells in '" + line + "'");
    if (cells[0] == "AVERAGE") {
      r.macro_precision = detail::parse_pct(cells[1]).value_or(0.0);
      r.macro_recall = detail::parse_pct(cells[2]).value_or(0.0);
      r.mean_ap = detail::parse_pct(cells[3]).value_or(0.0);
      have_average = true;
      continue;
    }
    GenreMetrics g{cells[0], detail::parse_pct(cells[1]).value_or(0.0), detail::parse_pct(cells[2]),
                   detail::parse_pct(cells[3])};
    r.excluded_recall += !g.recall;
    r.excluded_ap += !g.ap;
    r.genres.push_back(std::move(g));
  }
  if (!have_average || r.genres.size() != kNumGenres)
    throw DataError("metrics CSV: expected 21 genre rows and an AVERAGE row");
  return r;
}

/// Aligned text version of metrics_csv.
inline std::string metrics_table(const MetricsReport& r) {
  std::ostringstream os;
  char line[128];
  char thr[32];
  std::snprintf(thr, sizeof thr, "%g", r.threshold);
  const std::string p = std::string("P@") + thr, rc = std::string("R@") + thr;
  std::snprintf(line, sizeof line, "%-12s %8s %8s %8s\n", "Genre", p.c_str(), rc.c_str(), "AP");
  os << line;
  for (const auto& g : r.genres) {
    std::snprintf(line, sizeof line, "%-12s %8s %8s %8s\n", g.genre.c_str(),
                  detail::pct(g.precision).c_str(), detail::pct(g.recall).c_str(),
                  detail::pct(g.ap).c_str());
    os << line;
  }
  std::snprintf(line, sizeof line, "%-12s %8s %8s %8s\n", "AVERAGE",
                detail::pct(r.macro_precision).c_str(), detail::pct(r.macro_recall).c_str(),
                detail::pct(r.mean_ap).c_str());
  os << line;
  os << "samples: " << r.sample_count << ", genres without positives: " << r.excluded_ap
     << ", AP: " << r.ap_variant << '\n';
  return os.str();
}

inline nlohmann::json metrics_json(const MetricsReport& r) {
  nlohmann::json genres = nlohmann::json::array();
  for (const auto& g : r.genres) {
    nlohmann::json row = {{"genre", g.genre}, {"precision", g.precision}};
    row["recall"] = g.recall ? nlohmann::json(*g.recall) : nlohmann::json(nullptr);
    row["ap"] = g.ap ? nlohmann::json(*g.ap) : nlohmann::json(nullptr);
    genres.push_back(row);
  }
  return {{"threshold", r.threshold},       {"samples", r.sample_count},
          {"macro_precision", r.macro_precision}, {"macro_recall", r.macro_recall},
          {"mAP", r.mean_ap},               {"excluded_recall", r.excluded_recall},
          {"excluded_ap", r.excluded_ap},   {"ap_variant", r.ap_variant},
          {"genres", genres}};
}

}  // namespace mmgenre
