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

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "birdsed/dataset.hpp"

namespace birdsed {

struct SegmentKey {
  std::string recording;
  int segment_index = 0;

  auto operator<=>(const SegmentKey&) const = default;
};

/// Segment-level probabilities: probabilities[row][k] for species[k].
struct PredictionTable {
  std::vector<std::string> species;
  std::vector<SegmentKey> keys;
  std::vector<std::vector<double>> probabilities;

  std::size_t size() const { return keys.size(); }
  /// Rows match species width, values in [0, 1], keys unique.
  void validate() const;
};

/// Long form `recording,segment_index,species,probability`, rows sorted by
/// key then species order.
void write_predictions(const std::filesystem::path& path, const PredictionTable& table);
/// Species order follows first appearance. Every key must carry every species once.
PredictionTable read_predictions(const std::filesystem::path& path);

/// p_i <- clamp(p_i - factor * x_i / sum(x), 0, 1) on every row.
PredictionTable penalize(const PredictionTable& table, std::span<const double> counts, double factor);

struct ThresholdEntry {
  std::string species;
  double quantile = 0.0;
  double threshold = 0.0;
  double score = 0.0;
};

using ThresholdTable = std::vector<ThresholdEntry>;

/// {0.05, 0.10, ..., 0.95}.
std::vector<double> default_quantile_grid();
/// Evenly spaced grid of `step` from `step` up to below 1.
std::vector<double> quantile_grid(double step);

/// Linear interpolation between order statistics: position q (n - 1) in
/// the sorted values.
double empirical_quantile(std::vector<double> values, double q);

/// One quantile-grid evaluation for one species.
struct GridPoint {
  std::string species;
  double quantile = 0.0;
  double threshold = 0.0;
  double score = 0.0;
};

/// For every species in `scored`: candidate thresholds are empirical
/// quantiles of its probabilities over all rows; decisions p >= tau are
/// scored against the species-agnostic `call` truth (1 = any call) by
/// binarized AUC. The best score wins, ties to the smaller quantile.
/// `curve`, when given, receives every grid evaluation.
ThresholdTable fit_class_thresholds(const PredictionTable& table, std::span<const int> call,
                                    std::span<const double> grid, const std::vector<std::string>& scored,
                                    std::vector<GridPoint>* curve = nullptr);

/// Same threshold for every species.
ThresholdTable global_thresholds(const std::vector<std::string>& species, double threshold);

/// Species k is emitted iff p_k >= tau_k. Species outside `scored` are never
/// emitted; a scored species without a threshold is an error. Empty
/// decisions mean nocall.
std::vector<SegmentTruth> apply_thresholds(const PredictionTable& table, const ThresholdTable& thresholds,
                                           const std::vector<std::string>& scored);

/// Elementwise mean. Keys and species order must match exactly.
PredictionTable ensemble(const std::vector<PredictionTable>& tables);

/// Aligns per-segment call/nocall truth to the table rows.
std::vector<int> call_labels(const PredictionTable& table, const std::vector<SegmentTruth>& truth);

/// `species,quantile,threshold,score`.
void write_thresholds(const std::filesystem::path& path, const ThresholdTable& table);
ThresholdTable read_thresholds(const std::filesystem::path& path);
void write_grid_curve(const std::filesystem::path& path, const std::vector<GridPoint>& curve);

/// `species,bin_low,bin_high,count,call,nocall`: per-species probability
/// histogram split by call/nocall truth. Counts per species sum to the row count.
void write_score_histogram(const std::filesystem::path& path, const PredictionTable& table,
                           std::span<const int> call, int bins);

}  // namespace birdsed
