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

#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "birdsed/dataset.hpp"
#include "birdsed/dsp.hpp"
#include "birdsed/error.hpp"
#include "test_support.hpp"

namespace birdsed {
namespace {

namespace fs = std::filesystem;

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SynthConfig tiny_synth() {
  SynthConfig c;
  c.n_species = 3;
  c.head_count = 2;
  c.n_calibration_soundscapes = 1;
  c.n_test_soundscapes = 1;
  return c;
}

TEST(ParseMetadata, RowsLabelsAndRatings) {
  const auto dir = testing::scratch_dir("meta_rows");
  write_file(dir / "m.csv", "filename,labels,rating\na.wav,skylar houfin,4.5\nsub/b.wav,houfin,0\nc.wav,skylar,3\n");
  SpeciesTable table;
  const auto recs = parse_metadata(dir / "m.csv", table);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].labels, (std::vector<std::string>{"skylar", "houfin"}));
  EXPECT_DOUBLE_EQ(recs[0].rating, 4.5);
  EXPECT_EQ(recs[1].audio_path, dir / "sub" / "b.wav");
  EXPECT_EQ(recs[2].id(), "c");
  EXPECT_EQ(table.size(), 2u);
}

TEST(ParseMetadata, EmptyLabelsNamesTheRow) {
  const auto dir = testing::scratch_dir("meta_empty_labels");
  write_file(dir / "m.csv", "filename,labels,rating\na.wav,skylar,4\nb.wav,,3\n");
  SpeciesTable table;
  try {
    parse_metadata(dir / "m.csv", table);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kMalformedRow);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(ParseMetadata, RejectsBadRatingUnknownSpeciesAndEmptyFile) {
  const auto dir = testing::scratch_dir("meta_errors");
  SpeciesTable table({"skylar"});
  write_file(dir / "r.csv", "filename,labels,rating\na.wav,skylar,7\n");
  EXPECT_THROW(parse_metadata(dir / "r.csv", table), Error);
  write_file(dir / "u.csv", "filename,labels,rating\na.wav,mystery,2\n");
  EXPECT_THROW(parse_metadata(dir / "u.csv", table, UnknownSpecies::kReject), Error);
  write_file(dir / "e.csv", "filename,labels,rating\n");
  try {
    parse_metadata(dir / "e.csv", table);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kEmptyInput);
  }
}

TEST(ClassDistribution, CountsMultiLabelRecordings) {
  SpeciesTable table({"a", "b", "c"});
  std::vector<Recording> recs(3);
  recs[0].labels = {"a", "b"};
  recs[1].labels = {"a"};
  recs[2].labels = {"b"};
  const auto counted = class_distribution(recs, table);
  EXPECT_EQ(counted.counts(), (std::vector<std::size_t>{2, 2, 0}));
  std::size_t total = 0;
  for (auto c : counted.counts()) total += c;
  EXPECT_GT(total, recs.size());
  EXPECT_EQ(class_distribution({}, table).counts(), (std::vector<std::size_t>{0, 0, 0}));
}

TEST(ClassDistribution, FiveHundredRecordings) {
  SpeciesTable table({"skylar", "other"});
  std::vector<Recording> recs(500);
  for (auto& r : recs) r.labels = {"skylar"};
  EXPECT_EQ(class_distribution(recs, table).counts()[0], 500u);
}

TEST(SegmentTruth, RoundTripWithNocall) {
  const auto dir = testing::scratch_dir("truth_io");
  const std::vector<SegmentTruth> rows{{"r1", 0, {}}, {"r1", 1, {"a", "b"}}, {"r2", 0, {"c"}}};
  write_segment_truth(dir / "t.csv", rows);
  EXPECT_NE(read_file(dir / "t.csv").find("r1,0,nocall"), std::string::npos);
  const auto back = read_segment_truth(dir / "t.csv");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_FALSE(back[0].is_call());
  EXPECT_EQ(back[1].labels, (std::vector<std::string>{"a", "b"}));
}

TEST(Synth, ZipfCounts) {
  EXPECT_EQ(zipf_counts(8, 64, 1.0), (std::vector<int>{64, 32, 21, 16, 12, 10, 9, 8}));
  EXPECT_EQ(zipf_counts(3, 2, 2.0), (std::vector<int>{2, 1, 1}));
}

TEST(Synth, MotifsAreInBandAndSeparatedInMel) {
  SynthConfig c;
  const auto motifs = synth_motifs(c);
  ASSERT_EQ(motifs.size(), 8u);
  SpectrogramParams p;
  const double step = (hz_to_mel(p.fmax) - hz_to_mel(p.fmin)) / (p.n_mels + 1);
  std::set<std::string> names;
  for (std::size_t i = 0; i < motifs.size(); ++i) {
    names.insert(motifs[i].name);
    EXPECT_GE(motifs[i].low_hz(), p.fmin);
    EXPECT_LE(motifs[i].high_hz(), p.fmax);
    if (i > 0) {
      const double gap = hz_to_mel(motifs[i].low_hz()) - hz_to_mel(motifs[i - 1].high_hz());
      EXPECT_GE(gap / step, 3.0) << motifs[i].name;
    }
  }
  EXPECT_EQ(names.size(), 8u);
}

TEST(Synth, DeterministicAndConsistent) {
  const auto a = testing::scratch_dir("synth_a");
  const auto b = testing::scratch_dir("synth_b");
  const auto ra = synth_dataset(tiny_synth(), 42, a);
  synth_dataset(tiny_synth(), 42, b);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    EXPECT_EQ(read_file(entry.path()), read_file(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 6u);
  EXPECT_EQ(ra.train.size(), 4u);

  // Union of a recording's segment labels equals its weak label set.
  std::map<std::string, std::set<std::string>> seg;
  for (const auto& t : ra.train_truth) seg[t.recording].insert(t.labels.begin(), t.labels.end());
  for (const auto& r : ra.train) {
    EXPECT_EQ(seg[r.id()], std::set<std::string>(r.labels.begin(), r.labels.end())) << r.id();
  }
  SpeciesTable table;
  const auto parsed = parse_metadata(a / "train" / "metadata.csv", table);
  EXPECT_EQ(parsed.size(), ra.train.size());
}

TEST(Synth, DifferentSeedsDiffer) {
  const auto a = testing::scratch_dir("synth_seed_a");
  const auto b = testing::scratch_dir("synth_seed_b");
  synth_dataset(tiny_synth(), 1, a);
  synth_dataset(tiny_synth(), 2, b);
  EXPECT_NE(read_file(a / "calib" / "truth.csv") + read_file(a / "train" / "sp01_0001.wav"),
            read_file(b / "calib" / "truth.csv") + read_file(b / "train" / "sp01_0001.wav"));
}

class SampleBatchTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(testing::scratch_dir("batch"));
    synth_dataset(tiny_synth(), 5, *dir_);
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path* dir_;
};
fs::path* SampleBatchTest::dir_ = nullptr;

TEST_F(SampleBatchTest, ShapeAndLabels) {
  SpeciesTable table;
  const auto recs = parse_metadata(*dir_ / "train" / "metadata.csv", table);
  FeatureSource features{FeatureConfig{}};
  MixupPolicy none;
  none.apply_probability = 0.0;
  Rng rng(3);
  const auto batch = sample_batch(recs, table, 24, none, rng, features);
  ASSERT_EQ(batch.items.size(), 24u);
  for (const auto& item : batch.items) {
    ASSERT_EQ(item.chunks.size(), 6u);
    for (const auto& c : item.chunks) {
      EXPECT_EQ(c.values.rows(), 128);
      EXPECT_EQ(c.values.cols(), 313);
    }
    EXPECT_EQ(item.labels, table.multi_hot(recs[item.recording_index].labels));
    EXPECT_FALSE(item.mixed);
  }
}

TEST_F(SampleBatchTest, MixupUnionsLabelsAndIsDeterministic) {
  SpeciesTable table;
  const auto recs = parse_metadata(*dir_ / "train" / "metadata.csv", table);
  MixupPolicy always;
  always.apply_probability = 1.0;
  FeatureSource fa{FeatureConfig{}};
  FeatureSource fb{FeatureConfig{}, 0};
  Rng ra(8);
  Rng rb(8);
  const auto a = sample_batch(recs, table, 6, always, ra, fa);
  const auto b = sample_batch(recs, table, 6, always, rb, fb);
  ASSERT_EQ(a.items.size(), b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    EXPECT_TRUE(a.items[i].mixed);
    EXPECT_EQ(a.items[i].labels, b.items[i].labels);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(a.items[i].chunks[j].values, b.items[i].chunks[j].values);
    const auto own = table.multi_hot(recs[a.items[i].recording_index].labels);
    double sum = 0.0;
    for (std::size_t k = 0; k < own.size(); ++k) {
      EXPECT_GE(a.items[i].labels[k], own[k]);
      sum += a.items[i].labels[k];
    }
    EXPECT_GT(sum, 0.0);
  }
}

TEST_F(SampleBatchTest, CacheDoesNotChangeResults) {
  SpeciesTable table;
  const auto recs = parse_metadata(*dir_ / "train" / "metadata.csv", table);
  MixupPolicy p;
  FeatureSource cached{FeatureConfig{}};
  FeatureSource uncached{FeatureConfig{}, 0};
  Rng ra(11);
  Rng rb(11);
  for (int round = 0; round < 2; ++round) {
    const auto a = sample_batch(recs, table, 4, p, ra, cached);
    const auto b = sample_batch(recs, table, 4, p, rb, uncached);
    for (std::size_t i = 0; i < a.items.size(); ++i) {
      for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(a.items[i].chunks[j].values, b.items[i].chunks[j].values);
    }
  }
  EXPECT_GT(cached.cache_hits(), 0u);
  EXPECT_EQ(uncached.cache_hits(), 0u);
}

}  // namespace
}  // namespace birdsed
