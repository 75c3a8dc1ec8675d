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

#include "birdsed/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "birdsed/csv.hpp"
#include "birdsed/error.hpp"

namespace birdsed {

namespace {

void count_labels(std::span<const int> labels, std::size_t& pos, std::size_t& neg, const char* fn) {
  pos = 0;
  neg = 0;
  for (int l : labels) {
    if (l == 1) {
      ++pos;
    } else if (l == 0) {
      ++neg;
    } else {
      throw Error(Errc::kInvalidArgument, fmt::format("{}: labels must be 0 or 1, got {}", fn, l));
    }
  }
  if (pos == 0 || neg == 0) {
    throw Error(Errc::kDegenerateLabels,
                fmt::format("{}: need both classes, got {} positive and {} negative", fn, pos, neg));
  }
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw Error(Errc::kLengthMismatch, fmt::format("auc: {} scores but {} labels", scores.size(), labels.size()));
  }
  std::size_t pos = 0;
  std::size_t neg = 0;
  count_labels(labels, pos, neg, "auc");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

double binarized_auc(std::span<const int> decisions, std::span<const int> labels) {
  if (decisions.size() != labels.size()) {
    throw Error(Errc::kLengthMismatch,
                fmt::format("binarized_auc: {} decisions but {} labels", decisions.size(), labels.size()));
  }
  std::size_t pos = 0;
  std::size_t neg = 0;
  count_labels(labels, pos, neg, "binarized_auc");
  std::size_t tp = 0;
  std::size_t tn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1 && decisions[i] != 0) ++tp;
    if (labels[i] == 0 && decisions[i] == 0) ++tn;
  }
  return 0.5 * (static_cast<double>(tp) / pos + static_cast<double>(tn) / neg);
}

double ClassCounts::precision() const { return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0; }
double ClassCounts::recall() const { return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0; }
double ClassCounts::f1() const {
  return tp > 0 ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
}

F1Report f1_report(const std::vector<std::vector<std::string>>& decisions,
                   const std::vector<std::vector<std::string>>& truth) {
  if (decisions.size() != truth.size()) {
    throw Error(Errc::kKeyMismatch,
                fmt::format("f1: {} decision rows but {} truth rows", decisions.size(), truth.size()));
  }
  const auto as_set = [](const std::vector<std::string>& labels) {
    std::set<std::string> s(labels.begin(), labels.end());
    if (s.empty()) s.insert(kNocall);
    return s;
  };
  std::map<std::string, ClassCounts> counts;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto d = as_set(decisions[i]);
    const auto t = as_set(truth[i]);
    for (const auto& label : d) {
      auto& c = counts[label];
      if (t.count(label)) {
        ++c.tp;
      } else {
        ++c.fp;
      }
    }
    for (const auto& label : t) {
      if (!d.count(label)) ++counts[label].fn;
    }
  }
  F1Report report;
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  double macro_sum = 0.0;
  for (auto& [name, c] : counts) {
    c.name = name;
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
    macro_sum += c.f1();
    report.classes.push_back(c);
  }
  report.micro = tp > 0 ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
  report.macro = report.classes.empty() ? 0.0 : macro_sum / static_cast<double>(report.classes.size());
  return report;
}

double f1(const std::vector<std::vector<std::string>>& decisions,
          const std::vector<std::vector<std::string>>& truth, F1Mode mode) {
  const F1Report r = f1_report(decisions, truth);
  return mode == F1Mode::kMicro ? r.micro : r.macro;
}

F1Report evaluate_segments(const std::vector<SegmentTruth>& decisions, const std::vector<SegmentTruth>& truth) {
  using Key = std::pair<std::string, int>;
  std::map<Key, const SegmentTruth*> by_key;
  std::vector<std::string> problems;
  for (const auto& d : decisions) {
    if (!by_key.emplace(Key{d.recording, d.segment_index}, &d).second) {
      problems.push_back(fmt::format("duplicate decision {}#{}", d.recording, d.segment_index));
    }
  }
  std::vector<std::vector<std::string>> dec_sets;
  std::vector<std::vector<std::string>> truth_sets;
  std::set<Key> seen;
  for (const auto& t : truth) {
    const Key key{t.recording, t.segment_index};
    if (!seen.insert(key).second) {
      problems.push_back(fmt::format("duplicate truth {}#{}", t.recording, t.segment_index));
      continue;
    }
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      problems.push_back(fmt::format("missing decision {}#{}", t.recording, t.segment_index));
      continue;
    }
    dec_sets.push_back(it->second->labels);
    truth_sets.push_back(t.labels);
  }
  for (const auto& [key, row] : by_key) {
    if (!seen.count(key)) problems.push_back(fmt::format("no truth for {}#{}", key.first, key.second));
  }
  if (!problems.empty()) {
    std::string msg = fmt::format("{} segment key mismatches:", problems.size());
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(Errc::kKeyMismatch, msg);
  }
  return f1_report(dec_sets, truth_sets);
}

void write_metrics_report(const std::filesystem::path& path, const F1Report& report) {
  std::string text = "class,tp,fp,fn,precision,recall,f1\n";
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  for (const auto& c : report.classes) {
    text += fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f}\n", c.name, c.tp, c.fp, c.fn, c.precision(),
                        c.recall(), c.f1());
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  text += fmt::format("micro,{},{},{},,,{:.6f}\n", tp, fp, fn, report.micro);
  text += fmt::format("macro,,,,,,{:.6f}\n", report.macro);
  write_text_file(path, text);
}

}  // namespace birdsed
