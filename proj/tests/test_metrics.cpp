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

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "birdsed/error.hpp"
#include "birdsed/metrics.hpp"
#include "test_support.hpp"

namespace birdsed {
namespace {

using LabelSets = std::vector<std::vector<std::string>>;

double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return good / pairs;
}

// Draws label sets over a small alphabet; empty means nocall.
LabelSets random_sets(Rng& rng, int n) {
  const std::vector<std::string> names{"a", "b", "c", "d"};
  LabelSets out(static_cast<std::size_t>(n));
  for (auto& set : out) {
    for (const auto& name : names) {
      if (bernoulli(rng, 0.3)) set.push_back(name);
    }
  }
  return out;
}

std::vector<std::string> with_nocall(const std::vector<std::string>& s) {
  return s.empty() ? std::vector<std::string>{"nocall"} : s;
}

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.1, 0.2, 0.7, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{0, 1, 1}), 0.5);
  try {
    auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kDegenerateLabels);
  }
}

TEST(Auc, MatchesPairCountingAndItsSymmetries) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + seed % 40;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(uniform01(rng) * 10.0) / 10.0;
      y[i] = i < 2 ? static_cast<int>(i) : bernoulli(rng, 0.5);
    }
    const double a = auc(s, y);
    EXPECT_NEAR(a, pair_count_auc(s, y), 1e-12) << "seed " << seed;
    std::vector<double> warped;
    for (double v : s) warped.push_back(std::exp(3.0 * v) - 7.0);
    EXPECT_NEAR(auc(warped, y), a, 1e-12);
    std::vector<int> flipped;
    for (int v : y) flipped.push_back(1 - v);
    EXPECT_NEAR(a + auc(s, flipped), 1.0, 1e-12);
  }
}

TEST(BinarizedAuc, ExamplesAndAgreementWithAuc) {
  EXPECT_DOUBLE_EQ(binarized_auc(std::vector<int>{1, 0, 1}, std::vector<int>{1, 0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(binarized_auc(std::vector<int>{1, 1, 1}, std::vector<int>{1, 0, 1}), 0.5);
  EXPECT_THROW(binarized_auc(std::vector<int>{1}, std::vector<int>{0}), Error);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<int> d(30);
    std::vector<int> y(30);
    std::vector<double> scores;
    for (std::size_t i = 0; i < 30; ++i) {
      d[i] = bernoulli(rng, 0.5);
      y[i] = i < 2 ? static_cast<int>(i) : bernoulli(rng, 0.5);
      scores.push_back(d[i]);
    }
    EXPECT_NEAR(binarized_auc(d, y), auc(scores, y), 1e-12);
  }
}

TEST(F1, Examples) {
  // One class: TP 2, FP 1, FN 1.
  const LabelSets d{{"a"}, {"a"}, {"a"}, {"b"}};
  const LabelSets t{{"a"}, {"a"}, {"b"}, {"a"}};
  const auto r = f1_report(d, t);
  const auto a = std::find_if(r.classes.begin(), r.classes.end(), [](const ClassCounts& c) { return c.name == "a"; });
  ASSERT_NE(a, r.classes.end());
  EXPECT_EQ(a->tp, 2);
  EXPECT_EQ(a->fp, 1);
  EXPECT_EQ(a->fn, 1);
  EXPECT_NEAR(a->f1(), 2.0 / 3.0, 1e-15);

  // A missed call becomes a nocall false positive plus a species miss.
  EXPECT_DOUBLE_EQ(f1({{"a"}, {}}, {{"a"}, {"b"}}, F1Mode::kMacro), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(f1({{"a"}, {}}, {{"a"}, {"b"}}, F1Mode::kMicro), 0.5);
}

TEST(F1, MacroOverTwoClasses) {
  // Class a is perfect; class b only ever appears as a miss.
  EXPECT_DOUBLE_EQ(f1({{"a"}, {"a"}}, {{"a"}, {"a", "b"}}, F1Mode::kMacro), 0.5);
}

TEST(F1, PerfectDecisionsScoreOne) {
  Rng rng(1);
  const auto t = random_sets(rng, 50);
  EXPECT_EQ(f1(t, t, F1Mode::kMicro), 1.0);
  EXPECT_EQ(f1(t, t, F1Mode::kMacro), 1.0);
  auto d = t;
  d[3].push_back("zz");
  EXPECT_LT(f1(d, t, F1Mode::kMicro), 1.0);
  EXPECT_LT(f1(d, t, F1Mode::kMacro), 1.0);
}

TEST(F1, MatchesPooledCountsOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto d = random_sets(rng, 25);
    const auto t = random_sets(rng, 25);
    std::map<std::string, std::array<double, 3>> counts;  // tp, fp, fn
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto ds = with_nocall(d[i]);
      const auto ts = with_nocall(t[i]);
      const std::set<std::string> dset(ds.begin(), ds.end());
      const std::set<std::string> tset(ts.begin(), ts.end());
      for (const auto& c : dset) counts[c][tset.count(c) ? 0 : 1] += 1.0;
      for (const auto& c : tset) {
        if (!dset.count(c)) counts[c][2] += 1.0;
      }
    }
    double tp = 0, fp = 0, fn = 0, macro = 0;
    for (const auto& [name, c] : counts) {
      tp += c[0];
      fp += c[1];
      fn += c[2];
      macro += c[0] == 0 ? 0.0 : 2.0 * c[0] / (2.0 * c[0] + c[1] + c[2]);
    }
    macro /= static_cast<double>(counts.size());
    const auto r = f1_report(d, t);
    EXPECT_NEAR(r.micro, 2.0 * tp / (2.0 * tp + fp + fn), 1e-12) << "seed " << seed;
    EXPECT_NEAR(r.macro, macro, 1e-12) << "seed " << seed;
    EXPECT_LE(r.micro, 1.0);
    EXPECT_LE(r.macro, 1.0);
    EXPECT_EQ(r.classes.size(), counts.size());
  }
}

TEST(EvaluateSegments, MatchesRowsByKeyAndListsMismatches) {
  const std::vector<SegmentTruth> truth{{"r1", 0, {"a"}}, {"r1", 1, {}}, {"r2", 0, {"b"}}};
  const std::vector<SegmentTruth> shuffled{{"r2", 0, {"b"}}, {"r1", 1, {}}, {"r1", 0, {"a"}}};
  const auto r = evaluate_segments(shuffled, truth);
  EXPECT_EQ(r.micro, 1.0);
  EXPECT_EQ(r.macro, 1.0);
  const std::vector<SegmentTruth> off{{"r1", 0, {"a"}}, {"r1", 2, {}}, {"r3", 0, {"b"}}};
  try {
    evaluate_segments(off, truth);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kKeyMismatch);
    const std::string msg = e.what();
    for (const char* key : {"r1", "r2", "r3"}) EXPECT_NE(msg.find(key), std::string::npos) << msg;
    EXPECT_NE(msg.find("no truth for r1#2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("missing decision r1#1"), std::string::npos) << msg;
  }
}

TEST(MetricsIo, ReportHasClassAndSummaryRows) {
  const auto dir = testing::scratch_dir("metrics_io");
  const auto r = f1_report({{"a"}, {}}, {{"a"}, {"b"}});
  write_metrics_report(dir / "m.csv", r);
  std::ifstream in(dir / "m.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "class,tp,fp,fn,precision,recall,f1");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), r.classes.size() + 2);
  EXPECT_EQ(lines[lines.size() - 2].rfind("micro", 0), 0u);
  EXPECT_EQ(lines.back().rfind("macro", 0), 0u);
}

}  // namespace
}  // namespace birdsed
