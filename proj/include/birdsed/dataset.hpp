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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "birdsed/audio_io.hpp"
#include "birdsed/augment.hpp"
#include "birdsed/dsp.hpp"
#include "birdsed/random.hpp"

namespace birdsed {

/// One metadata row: a weakly labeled recording. labels[0] is the primary.
struct Recording {
  std::filesystem::path audio_path;
  std::vector<std::string> labels;
  double rating = 0.0;
  bool is_scored_primary = false;

  /// File stem; used as the recording key in prediction tables.
  std::string id() const { return audio_path.stem().string(); }
};

/// Fixed species order for a run, with the scored subset and per-species
/// recording counts.
class SpeciesTable {
 public:
  SpeciesTable() = default;
  explicit SpeciesTable(std::vector<std::string> names, bool scored_by_default = true);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  /// Appends a species (scored per `scored_by_default`); returns its index.
  std::size_t add(const std::string& name);

  bool scored(std::size_t i) const { return scored_[i]; }
  const std::vector<bool>& scored_mask() const { return scored_; }
  /// Marks exactly `names` as scored. Unknown names are an error.
  void set_scored(const std::vector<std::string>& names);
  std::size_t n_scored() const;

  const std::vector<std::size_t>& counts() const { return counts_; }
  void set_counts(std::vector<std::size_t> counts);

  /// 1.0 at every labeled species, 0.0 elsewhere.
  std::vector<double> multi_hot(const std::vector<std::string>& labels) const;

  bool scored_by_default() const { return scored_by_default_; }

 private:
  std::vector<std::string> names_;
  std::vector<bool> scored_;
  std::vector<std::size_t> counts_;
  std::map<std::string, std::size_t> index_;
  bool scored_by_default_ = true;
};

enum class UnknownSpecies { kAdd, kReject };

/// Reads `filename,labels,rating` rows. Relative filenames resolve against
/// the CSV's directory. Unknown species are added to `table` or rejected.
std::vector<Recording> parse_metadata(const std::filesystem::path& path, SpeciesTable& table,
                                      UnknownSpecies policy = UnknownSpecies::kAdd);

void write_metadata(const std::filesystem::path& path, const std::vector<Recording>& recordings);

/// counts[i] = number of recordings whose label set contains species i.
SpeciesTable class_distribution(const std::vector<Recording>& recordings, const SpeciesTable& table);

/// Strong (segment-level) label. Empty labels mean nocall.
struct SegmentTruth {
  std::string recording;
  int segment_index = 0;
  std::vector<std::string> labels;

  bool is_call() const { return !labels.empty(); }
};

inline constexpr const char* kNocall = "nocall";

/// `recording,segment_index,labels` with space-separated labels or `nocall`.
std::vector<SegmentTruth> read_segment_truth(const std::filesystem::path& path);
void write_segment_truth(const std::filesystem::path& path, const std::vector<SegmentTruth>& rows);

struct FeatureConfig {
  SpectrogramParams spectrogram;
  double window_s = 30.0;
  double chunk_s = 5.0;
  int n_parts = 6;

  std::size_t window_samples() const;
};

/// The 6-chunk spectrogram stack of one 30 s window.
using ChunkStack = std::vector<MelSpectrogram>;

struct BackgroundNoise {
  std::vector<AudioClip> clips;
  double probability = 0.5;
  double snr_min_db = 0.0;
  double snr_max_db = 20.0;
};

/// Load -> resample -> crop -> (background mix) -> split -> log-mel.
///
/// Stacks are memoized per (file, crop offset) up to a byte budget. The rng
/// is consumed identically on hits and misses, so caching never changes
/// results. Not thread-safe; use one instance per worker.
class FeatureSource {
 public:
  explicit FeatureSource(FeatureConfig config, std::size_t cache_bytes = std::size_t{1} << 30);

  const FeatureConfig& config() const { return config_; }
  void set_background(BackgroundNoise noise);

  ChunkStack window_features(const Recording& recording, Rng& rng);
  /// Every full chunk of a file, in order, without cropping (inference path).
  ChunkStack segment_features(const AudioClip& clip);

  std::size_t cache_hits() const { return hits_; }
  std::size_t cache_misses() const { return misses_; }

 private:
  AudioClip load(const std::filesystem::path& path);
  ChunkStack compute(const AudioClip& window);

  FeatureConfig config_;
  MelExtractor extractor_;
  std::optional<BackgroundNoise> background_;
  std::size_t cache_budget_;
  std::size_t cache_used_ = 0;
  std::map<std::string, std::size_t> lengths_;
  std::map<std::pair<std::string, std::size_t>, ChunkStack> cache_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

struct BatchItem {
  ChunkStack chunks;
  std::vector<double> labels;
  double rating = 0.0;
  std::size_t recording_index = 0;
  bool mixed = false;
};

struct Batch {
  std::vector<BatchItem> items;
};

/// Optional spectrogram masking applied to every chunk with probability p.
struct BatchAugmentation {
  std::optional<SpecAugmentPolicy> spec_augment;
  double spec_augment_probability = 0.0;
};

/// Draws batch_size recordings uniformly (with replacement), extracts their
/// chunk stacks, and with probability mixup.apply_probability mixes every
/// chunk with the same-index chunk of a partner. Partners come from
/// recordings whose primary label is scored: a scored species is drawn
/// uniformly, then one of its recordings uniformly.
Batch sample_batch(const std::vector<Recording>& recordings, const SpeciesTable& table,
                   std::size_t batch_size, const MixupPolicy& mixup, Rng& rng,
                   FeatureSource& features, const BatchAugmentation& augmentation = {});

struct SynthConfig {
  int n_species = 8;
  int head_count = 64;
  double zipf_exponent = 1.0;
  double clip_seconds = 30.0;
  int sample_rate = 32000;
  double noise_rms = 0.02;
  double call_amplitude = 0.3;
  double segment_call_probability = 0.5;
  double secondary_label_probability = 0.2;
  double unrated_probability = 0.05;
  int n_calibration_soundscapes = 40;
  int n_test_soundscapes = 40;
  double soundscape_nocall_probability = 0.4;
  double soundscape_overlap_probability = 0.1;
  double carrier_min_hz = 1500.0;
  double carrier_max_hz = 7000.0;

  void validate() const;
};

/// Species-specific frequency-modulated burst train.
struct SpeciesMotif {
  std::string name;
  double carrier_hz = 0.0;
  double fm_depth_hz = 0.0;
  double fm_rate_hz = 0.0;
  double burst_s = 0.0;
  double gap_s = 0.0;
  int n_bursts = 0;

  double duration_s() const { return n_bursts * burst_s + (n_bursts - 1) * gap_s; }
  double low_hz() const { return carrier_hz - fm_depth_hz; }
  double high_hz() const { return carrier_hz + fm_depth_hz; }
};

/// floor(head / rank^exponent), at least 1, for ranks 1..n.
std::vector<int> zipf_counts(int n_species, int head_count, double exponent);

std::vector<SpeciesMotif> synth_motifs(const SynthConfig& config);

/// Renders one motif into `out` starting at sample `start`, scaled by `amplitude`.
void render_motif(const SpeciesMotif& motif, double amplitude, std::size_t start, int sample_rate,
                  std::vector<float>& out);

/// Low-passed Gaussian noise, x_i = 0.7 x_{i-1} + 0.3 z_i, scaled to `target_rms`.
std::vector<float> noise_bed(std::size_t n, double target_rms, Rng& rng);

struct SynthResult {
  std::vector<std::string> species;
  std::vector<Recording> train;
  std::vector<SegmentTruth> train_truth;
  std::vector<SegmentTruth> calibration_truth;
  std::vector<SegmentTruth> test_truth;
};

/// Writes
///   <out>/species.csv
///   <out>/train/{*.wav, metadata.csv, truth.csv}
///   <out>/calib/{*.wav, truth.csv}
///   <out>/test/{*.wav, truth.csv}
SynthResult synth_dataset(const SynthConfig& config, std::uint64_t seed,
                          const std::filesystem::path& out_dir);

}  // namespace birdsed
