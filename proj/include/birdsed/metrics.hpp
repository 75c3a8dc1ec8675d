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

/// Mann-Whitney statistic: fraction of (positive, negative) pairs ordered
/// correctly, ties counted one half. Computed from average ranks.
/// Throws kDegenerateLabels without at least one positive and one negative.
double auc(std::span<const double> scores, std::span<const int> labels);

/// (TPR + TNR) / 2 of hard 0/1 decisions.
double binarized_auc(std::span<const int> decisions, std::span<const int> labels);

struct ClassCounts {
  std::string name;
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;

  double precision() const;
  double recall() const;
  /// 0 when tp == 0.
  double f1() const;
};

enum class F1Mode { kMicro, kMacro };

struct F1Report {
  /// Every class seen in decisions or truth, sorted by name; nocall included.
  std::vector<ClassCounts> classes;
  double micro = 0.0;
  double macro = 0.0;
};

/// Per-segment label sets; an empty set stands for nocall.
F1Report f1_report(const std::vector<std::vector<std::string>>& decisions,
                   const std::vector<std::vector<std::string>>& truth);
double f1(const std::vector<std::vector<std::string>>& decisions,
          const std::vector<std::vector<std::string>>& truth, F1Mode mode);

/// Matches decision and truth rows on (recording, segment_index). Any key
/// present on one side only is an error listing every such key.
F1Report evaluate_segments(const std::vector<SegmentTruth>& decisions,
                           const std::vector<SegmentTruth>& truth);

/// `class,tp,fp,fn,precision,recall,f1` then `micro` and `macro` rows.
void write_metrics_report(const std::filesystem::path& path, const F1Report& report);

}  // namespace birdsed
