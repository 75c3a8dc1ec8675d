// Copyright 2026 The birdsed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "birdsed/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

#include "birdsed/config.hpp"
#include "birdsed/csv.hpp"
#include "birdsed/error.hpp"
#include "birdsed/metrics.hpp"

namespace birdsed {

void PredictionTable::validate() const {
  if (probabilities.size() != keys.size()) {
    throw Error(Errc::kShapeMismatch, "prediction table: keys and rows differ in length");
  }
  std::set<SegmentKey> seen;
  for (std::size_t r = 0; r < keys.size(); ++r) {
    if (!seen.insert(keys[r]).second) {
      throw Error(Errc::kKeyMismatch,
                  fmt::format("prediction table: duplicate key {}#{}", keys[r].recording, keys[r].segment_index));
    }
    if (probabilities[r].size() != species.size()) {
      throw Error(Errc::kShapeMismatch,
                  fmt::format("prediction table: row {} has {} values for {} species", r,
                              probabilities[r].size(), species.size()));
    }
    for (double p : probabilities[r]) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw Error(Errc::kInvalidArgument, fmt::format("prediction table: probability {} outside [0, 1]", p));
      }
    }
  }
}

void write_predictions(const std::filesystem::path& path, const PredictionTable& table) {
  table.validate();
  std::vector<std::size_t> order(table.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return table.keys[a] < table.keys[b]; });
  std::string text = "recording,segment_index,species,probability\n";
  for (std::size_t r : order) {
    for (std::size_t k = 0; k < table.species.size(); ++k) {
      text += fmt::format("{},{},{},{:.9g}\n", table.keys[r].recording, table.keys[r].segment_index,
                          table.species[k], table.probabilities[r][k]);
    }
  }
  write_text_file(path, text);
}

PredictionTable read_predictions(const std::filesystem::path& path) {
  const CsvTable csv = read_csv(path);
  const std::size_t col_rec = csv.column("recording");
  const std::size_t col_seg = csv.column("segment_index");
  const std::size_t col_sp = csv.column("species");
  const std::size_t col_p = csv.column("probability");

  PredictionTable table;
  std::map<std::string, std::size_t> species_index;
  std::map<SegmentKey, std::size_t> row_index;
  std::vector<std::vector<std::pair<std::size_t, double>>> entries;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::string where = fmt::format("'{}' line {}", path.string(), csv.line_numbers[r]);
    SegmentKey key{row[col_rec], static_cast<int>(parse_int_field(row[col_seg], where + " segment_index"))};
    const double p = parse_double_field(row[col_p], where + " probability");
    auto [sit, new_species] = species_index.emplace(row[col_sp], table.species.size());
    if (new_species) table.species.push_back(row[col_sp]);
    auto [rit, new_row] = row_index.emplace(key, table.keys.size());
    if (new_row) {
      table.keys.push_back(key);
      entries.emplace_back();
    }
    entries[rit->second].emplace_back(sit->second, p);
  }
  table.probabilities.resize(table.keys.size());
  for (std::size_t r = 0; r < table.keys.size(); ++r) {
    std::vector<double> values(table.species.size(), std::nan(""));
    for (const auto& [k, p] : entries[r]) {
      if (!std::isnan(values[k])) {
        throw Error(Errc::kKeyMismatch,
                    fmt::format("'{}': {}#{} lists {} twice", path.string(), table.keys[r].recording,
                                table.keys[r].segment_index, table.species[k]));
      }
      values[k] = p;
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (std::isnan(values[k])) {
        throw Error(Errc::kKeyMismatch,
                    fmt::format("'{}': {}#{} has no probability for {}", path.string(), table.keys[r].recording,
                                table.keys[r].segment_index, table.species[k]));
      }
    }
    table.probabilities[r] = std::move(values);
  }
  table.validate();
  return table;
}

PredictionTable penalize(const PredictionTable& table, std::span<const double> counts, double factor) {
  if (counts.size() != table.species.size()) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("penalize: {} counts for {} species", counts.size(), table.species.size()));
  }
  if (!(factor >= 0.0)) throw Error(Errc::kInvalidArgument, "penalize: factor must be >= 0");
  double total = 0.0;
  for (double x : counts) {
    if (!(x >= 0.0)) throw Error(Errc::kInvalidArgument, "penalize: counts must be >= 0");
    total += x;
  }
  if (!(total > 0.0)) throw Error(Errc::kInvalidArgument, "penalize: counts sum to zero");
  PredictionTable out = table;
  for (auto& row : out.probabilities) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      row[k] = std::clamp(row[k] - factor * counts[k] / total, 0.0, 1.0);
    }
  }
  return out;
}

std::vector<double> default_quantile_grid() { return quantile_grid(0.05); }

std::vector<double> quantile_grid(double step) {
  if (!(step > 0.0 && step < 1.0)) throw Error(Errc::kInvalidArgument, "quantile grid: step must be in (0, 1)");
  std::vector<double> grid;
  for (int i = 1;; ++i) {
    const double q = std::round(i * step * 1e9) / 1e9;
    if (q >= 1.0) break;
    grid.push_back(q);
  }
  return grid;
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(Errc::kEmptyInput, "quantile: no values");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(Errc::kInvalidArgument, fmt::format("quantile: q {} outside [0, 1]", q));
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? values[lo] : values[lo] + frac * (values[hi] - values[lo]);
}

ThresholdTable fit_class_thresholds(const PredictionTable& table, std::span<const int> call,
                                    std::span<const double> grid, const std::vector<std::string>& scored,
                                    std::vector<GridPoint>* curve) {
  table.validate();
  if (call.size() != table.size()) {
    throw Error(Errc::kLengthMismatch,
                fmt::format("fit_class_thresholds: {} truth labels for {} rows", call.size(), table.size()));
  }
  if (grid.empty()) throw Error(Errc::kEmptyInput, "fit_class_thresholds: empty quantile grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] < 1.0) || (i > 0 && !(grid[i] > grid[i - 1]))) {
      throw Error(Errc::kInvalidArgument, "fit_class_thresholds: grid must be ascending within (0, 1)");
    }
  }
  ThresholdTable out;
  for (const auto& name : scored) {
    const auto it = std::find(table.species.begin(), table.species.end(), name);
    if (it == table.species.end()) {
      throw Error(Errc::kKeyMismatch, fmt::format("fit_class_thresholds: no predictions for species '{}'", name));
    }
    const auto k = static_cast<std::size_t>(it - table.species.begin());
    std::vector<double> values(table.size());
    for (std::size_t r = 0; r < table.size(); ++r) values[r] = table.probabilities[r][k];

    ThresholdEntry best{name, 0.0, 0.0, -1.0};
    std::vector<int> decisions(values.size());
    for (double q : grid) {
      const double tau = empirical_quantile(values, q);
      for (std::size_t r = 0; r < values.size(); ++r) decisions[r] = values[r] >= tau ? 1 : 0;
      double score = 0.0;
      try {
        score = binarized_auc(decisions, call);
      } catch (const Error& e) {
        if (e.code() != Errc::kDegenerateLabels) throw;
        throw Error(Errc::kDegenerateLabels,
                    fmt::format("fit_class_thresholds: species '{}': calibration truth needs both call and "
                                "nocall segments",
                                name));
      }
      if (curve) curve->push_back({name, q, tau, score});
      if (score > best.score) best = {name, q, tau, score};
    }
    out.push_back(best);
  }
  return out;
}

ThresholdTable global_thresholds(const std::vector<std::string>& species, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "global threshold must be in [0, 1]");
  }
  ThresholdTable out;
  for (const auto& s : species) out.push_back({s, 0.0, threshold, 0.0});
  return out;
}

std::vector<SegmentTruth> apply_thresholds(const PredictionTable& table, const ThresholdTable& thresholds,
                                           const std::vector<std::string>& scored) {
  table.validate();
  std::vector<std::pair<std::size_t, double>> active;
  for (const auto& name : scored) {
    const auto sp = std::find(table.species.begin(), table.species.end(), name);
    if (sp == table.species.end()) {
      throw Error(Errc::kKeyMismatch, fmt::format("apply_thresholds: no predictions for species '{}'", name));
    }
    const auto th = std::find_if(thresholds.begin(), thresholds.end(),
                                 [&](const ThresholdEntry& e) { return e.species == name; });
    if (th == thresholds.end()) {
      throw Error(Errc::kMissingThreshold, fmt::format("apply_thresholds: no threshold for species '{}'", name));
    }
    active.emplace_back(static_cast<std::size_t>(sp - table.species.begin()), th->threshold);
  }
  std::sort(active.begin(), active.end());
  std::vector<SegmentTruth> out;
  out.reserve(table.size());
  for (std::size_t r = 0; r < table.size(); ++r) {
    SegmentTruth row;
    row.recording = table.keys[r].recording;
    row.segment_index = table.keys[r].segment_index;
    for (const auto& [k, tau] : active) {
      if (table.probabilities[r][k] >= tau) row.labels.push_back(table.species[k]);
    }
    out.push_back(std::move(row));
  }
  std::sort(out.begin(), out.end(), [](const SegmentTruth& a, const SegmentTruth& b) {
    return std::tie(a.recording, a.segment_index) < std::tie(b.recording, b.segment_index);
  });
  return out;
}

PredictionTable ensemble(const std::vector<PredictionTable>& tables) {
  if (tables.empty()) throw Error(Errc::kEmptyInput, "ensemble: no tables");
  const PredictionTable& first = tables.front();
  first.validate();
  PredictionTable out = first;
  for (std::size_t t = 1; t < tables.size(); ++t) {
    const auto& other = tables[t];
    other.validate();
    if (other.species != first.species) throw Error(Errc::kKeyMismatch, "ensemble: species order differs");
    if (other.keys != first.keys) throw Error(Errc::kKeyMismatch, "ensemble: segment keys differ");
    for (std::size_t r = 0; r < out.size(); ++r) {
      for (std::size_t k = 0; k < out.species.size(); ++k) out.probabilities[r][k] += other.probabilities[r][k];
    }
  }
  const auto n = static_cast<double>(tables.size());
  for (auto& row : out.probabilities) {
    for (auto& p : row) p = std::clamp(p / n, 0.0, 1.0);
  }
  return out;
}

std::vector<int> call_labels(const PredictionTable& table, const std::vector<SegmentTruth>& truth) {
  std::map<SegmentKey, int> by_key;
  for (const auto& t : truth) by_key[{t.recording, t.segment_index}] = t.is_call() ? 1 : 0;
  std::vector<int> out(table.size());
  std::vector<std::string> missing;
  for (std::size_t r = 0; r < table.size(); ++r) {
    auto it = by_key.find(table.keys[r]);
    if (it == by_key.end()) {
      missing.push_back(fmt::format("{}#{}", table.keys[r].recording, table.keys[r].segment_index));
    } else {
      out[r] = it->second;
    }
  }
  if (!missing.empty()) {
    std::string msg = fmt::format("{} prediction rows have no call/nocall truth:", missing.size());
    for (const auto& m : missing) msg += "\n  " + m;
    throw Error(Errc::kKeyMismatch, msg);
  }
  return out;
}

void write_thresholds(const std::filesystem::path& path, const ThresholdTable& table) {
  std::string text = "species,quantile,threshold,score\n";
  for (const auto& e : table) {
    text += fmt::format("{},{},{:.9g},{:.9g}\n", e.species, format_double(e.quantile), e.threshold, e.score);
  }
  write_text_file(path, text);
}

ThresholdTable read_thresholds(const std::filesystem::path& path) {
  const CsvTable csv = read_csv(path);
  const std::size_t col_sp = csv.column("species");
  const std::size_t col_q = csv.column("quantile");
  const std::size_t col_t = csv.column("threshold");
  const std::size_t col_s = csv.column("score");
  ThresholdTable out;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::string where = fmt::format("'{}' line {}", path.string(), csv.line_numbers[r]);
    ThresholdEntry e;
    e.species = row[col_sp];
    e.quantile = parse_double_field(row[col_q], where + " quantile");
    e.threshold = parse_double_field(row[col_t], where + " threshold");
    e.score = parse_double_field(row[col_s], where + " score");
    if (!(e.threshold >= 0.0 && e.threshold <= 1.0)) {
      throw Error(Errc::kMalformedRow, fmt::format("{}: threshold {} outside [0, 1]", where, e.threshold));
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_grid_curve(const std::filesystem::path& path, const std::vector<GridPoint>& curve) {
  std::string text = "species,quantile,threshold,score\n";
  for (const auto& g : curve) {
    text += fmt::format("{},{},{:.9g},{:.9g}\n", g.species, format_double(g.quantile), g.threshold, g.score);
  }
  write_text_file(path, text);
}

void write_score_histogram(const std::filesystem::path& path, const PredictionTable& table,
                           std::span<const int> call, int bins) {
  if (bins < 1) throw Error(Errc::kInvalidArgument, "histogram: bins must be >= 1");
  if (call.size() != table.size()) throw Error(Errc::kLengthMismatch, "histogram: truth length differs");
  std::string text = "species,bin_low,bin_high,count,call,nocall\n";
  for (std::size_t k = 0; k < table.species.size(); ++k) {
    std::vector<long long> n_call(static_cast<std::size_t>(bins), 0);
    std::vector<long long> n_nocall(static_cast<std::size_t>(bins), 0);
    for (std::size_t r = 0; r < table.size(); ++r) {
      const double p = table.probabilities[r][k];
      const auto b = static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(std::floor(p * bins))));
      (call[r] ? n_call : n_nocall)[b] += 1;
    }
    for (int b = 0; b < bins; ++b) {
      const auto i = static_cast<std::size_t>(b);
      text += fmt::format("{},{},{},{},{},{}\n", table.species[k], format_double(static_cast<double>(b) / bins),
                          format_double(static_cast<double>(b + 1) / bins), n_call[i] + n_nocall[i], n_call[i],
                          n_nocall[i]);
    }
  }
  write_text_file(path, text);
}

}  // namespace birdsed
