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

#include "birdsed/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "birdsed/config.hpp"
#include "birdsed/csv.hpp"
#include "birdsed/error.hpp"

namespace birdsed {

namespace {

std::vector<std::string> split_whitespace(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string item;
  while (in >> item) out.push_back(item);
  return out;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// SpeciesTable

SpeciesTable::SpeciesTable(std::vector<std::string> names, bool scored_by_default)
    : scored_by_default_(scored_by_default) {
  for (auto& n : names) add(n);
}

std::optional<std::size_t> SpeciesTable::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t SpeciesTable::index_of(const std::string& name) const {
  auto idx = find(name);
  if (!idx) throw Error(Errc::kInvalidArgument, fmt::format("unknown species '{}'", name));
  return *idx;
}

std::size_t SpeciesTable::add(const std::string& name) {
  if (auto idx = find(name)) return *idx;
  const std::size_t idx = names_.size();
  names_.push_back(name);
  scored_.push_back(scored_by_default_);
  counts_.push_back(0);
  index_[name] = idx;
  return idx;
}

void SpeciesTable::set_scored(const std::vector<std::string>& names) {
  std::vector<bool> mask(names_.size(), false);
  for (const auto& n : names) mask[index_of(n)] = true;
  scored_ = std::move(mask);
}

std::size_t SpeciesTable::n_scored() const {
  return static_cast<std::size_t>(std::count(scored_.begin(), scored_.end(), true));
}

void SpeciesTable::set_counts(std::vector<std::size_t> counts) {
  if (counts.size() != names_.size()) {
    throw Error(Errc::kShapeMismatch, "species table: counts length differs from species count");
  }
  counts_ = std::move(counts);
}

std::vector<double> SpeciesTable::multi_hot(const std::vector<std::string>& labels) const {
  std::vector<double> out(names_.size(), 0.0);
  for (const auto& l : labels) out[index_of(l)] = 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Metadata

std::vector<Recording> parse_metadata(const std::filesystem::path& path, SpeciesTable& table,
                                      UnknownSpecies policy) {
  const CsvTable csv = read_csv(path);
  const std::size_t col_file = csv.column("filename");
  const std::size_t col_labels = csv.column("labels");
  const std::size_t col_rating = csv.column("rating");
  if (csv.rows.empty()) {
    throw Error(Errc::kEmptyInput, fmt::format("'{}' has no recordings", path.string()));
  }
  const auto base = path.parent_path();

  std::vector<Recording> out;
  out.reserve(csv.rows.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::string where = fmt::format("'{}' line {}", path.string(), csv.line_numbers[r]);
    if (row[col_file].empty()) throw Error(Errc::kMalformedRow, where + ": empty filename");
    Recording rec;
    const std::filesystem::path file(row[col_file]);
    rec.audio_path = file.is_absolute() ? file : base / file;
    for (auto& label : split_whitespace(row[col_labels])) {
      if (std::find(rec.labels.begin(), rec.labels.end(), label) == rec.labels.end()) {
        rec.labels.push_back(std::move(label));
      }
    }
    if (rec.labels.empty()) throw Error(Errc::kMalformedRow, where + ": empty labels field");
    rec.rating = parse_double_field(row[col_rating], where + " rating");
    if (!(rec.rating >= 0.0 && rec.rating <= 5.0)) {
      throw Error(Errc::kMalformedRow, fmt::format("{}: rating {} outside [0, 5]", where, rec.rating));
    }
    for (const auto& label : rec.labels) {
      if (!table.find(label)) {
        if (policy == UnknownSpecies::kReject) {
          throw Error(Errc::kMalformedRow, fmt::format("{}: unknown species '{}'", where, label));
        }
        table.add(label);
      }
    }
    out.push_back(std::move(rec));
  }
  for (auto& rec : out) rec.is_scored_primary = table.scored(table.index_of(rec.labels.front()));
  return out;
}

void write_metadata(const std::filesystem::path& path, const std::vector<Recording>& recordings) {
  std::string text = "filename,labels,rating\n";
  for (const auto& rec : recordings) {
    text += fmt::format("{},{},{}\n", rec.audio_path.filename().string(), join(rec.labels, ' '),
                        format_double(rec.rating));
  }
  write_text_file(path, text);
}

SpeciesTable class_distribution(const std::vector<Recording>& recordings, const SpeciesTable& table) {
  SpeciesTable out = table;
  std::vector<std::size_t> counts(table.size(), 0);
  for (const auto& rec : recordings) {
    for (const auto& label : rec.labels) {
      if (auto idx = table.find(label)) ++counts[*idx];
    }
  }
  out.set_counts(std::move(counts));
  return out;
}

std::vector<SegmentTruth> read_segment_truth(const std::filesystem::path& path) {
  const CsvTable csv = read_csv(path);
  const std::size_t col_rec = csv.column("recording");
  const std::size_t col_seg = csv.column("segment_index");
  const std::size_t col_labels = csv.column("labels");
  std::vector<SegmentTruth> out;
  out.reserve(csv.rows.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::string where = fmt::format("'{}' line {}", path.string(), csv.line_numbers[r]);
    SegmentTruth truth;
    truth.recording = row[col_rec];
    truth.segment_index = static_cast<int>(parse_int_field(row[col_seg], where + " segment_index"));
    if (truth.segment_index < 0) throw Error(Errc::kMalformedRow, where + ": negative segment index");
    for (auto& label : split_whitespace(row[col_labels])) {
      if (label != kNocall) truth.labels.push_back(std::move(label));
    }
    out.push_back(std::move(truth));
  }
  return out;
}

void write_segment_truth(const std::filesystem::path& path, const std::vector<SegmentTruth>& rows) {
  std::string text = "recording,segment_index,labels\n";
  for (const auto& row : rows) {
    text += fmt::format("{},{},{}\n", row.recording, row.segment_index,
                        row.labels.empty() ? std::string(kNocall) : join(row.labels, ' '));
  }
  write_text_file(path, text);
}

// ---------------------------------------------------------------------------
// Features

std::size_t FeatureConfig::window_samples() const {
  return static_cast<std::size_t>(std::llround(window_s * spectrogram.sample_rate));
}

FeatureSource::FeatureSource(FeatureConfig config, std::size_t cache_bytes)
    : config_(std::move(config)), extractor_(config_.spectrogram), cache_budget_(cache_bytes) {
  const double covered = config_.chunk_s * config_.n_parts;
  if (std::abs(covered - config_.window_s) > 1e-9) {
    throw Error(Errc::kInvalidArgument,
                fmt::format("feature config: {} x {} s chunks do not cover the {} s window",
                            config_.n_parts, config_.chunk_s, config_.window_s));
  }
}

void FeatureSource::set_background(BackgroundNoise noise) {
  if (noise.clips.empty()) {
    background_.reset();
    return;
  }
  for (auto& clip : noise.clips) clip = resample(clip, config_.spectrogram.sample_rate);
  background_ = std::move(noise);
}

AudioClip FeatureSource::load(const std::filesystem::path& path) {
  return resample(load_wav(path), config_.spectrogram.sample_rate);
}

ChunkStack FeatureSource::compute(const AudioClip& window) {
  ChunkStack stack;
  for (const auto& chunk : split_chunks(window, config_.chunk_s, config_.n_parts)) {
    stack.push_back(extractor_(chunk));
  }
  return stack;
}

ChunkStack FeatureSource::window_features(const Recording& recording, Rng& rng) {
  const std::string key = recording.audio_path.string();
  std::optional<AudioClip> clip;
  std::size_t length = 0;
  if (auto it = lengths_.find(key); it != lengths_.end()) {
    length = it->second;
  } else {
    clip = load(recording.audio_path);
    length = clip->samples.size();
    lengths_[key] = length;
  }
  const std::size_t window_len = config_.window_samples();
  const std::size_t offset = draw_crop_offset(length, window_len, rng);

  bool mix = false;
  std::size_t noise_index = 0;
  double snr_db = 0.0;
  if (background_) {
    mix = bernoulli(rng, background_->probability);
    noise_index = static_cast<std::size_t>(uniform_index(rng, background_->clips.size()));
    snr_db = uniform_real(rng, background_->snr_min_db, background_->snr_max_db);
  }

  const auto cache_key = std::make_pair(key, offset);
  if (!mix) {
    if (auto it = cache_.find(cache_key); it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  ++misses_;
  if (!clip) clip = load(recording.audio_path);
  AudioClip window = tile_crop(*clip, window_len, offset);
  if (mix) window = mix_background(window, background_->clips[noise_index], snr_db);
  ChunkStack stack = compute(window);
  if (!mix) {
    std::size_t bytes = 0;
    for (const auto& s : stack) bytes += static_cast<std::size_t>(s.values.size()) * sizeof(double);
    if (cache_used_ + bytes <= cache_budget_) {
      cache_used_ += bytes;
      cache_.emplace(cache_key, stack);
    }
  }
  return stack;
}

ChunkStack FeatureSource::segment_features(const AudioClip& clip) {
  const AudioClip audio = resample(clip, config_.spectrogram.sample_rate);
  const auto chunk_len =
      static_cast<std::size_t>(std::llround(config_.chunk_s * config_.spectrogram.sample_rate));
  ChunkStack stack;
  for (std::size_t start = 0; start + chunk_len <= audio.samples.size(); start += chunk_len) {
    AudioClip chunk;
    chunk.sample_rate = audio.sample_rate;
    chunk.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(start),
                         audio.samples.begin() + static_cast<std::ptrdiff_t>(start + chunk_len));
    stack.push_back(extractor_(chunk));
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Batches

Batch sample_batch(const std::vector<Recording>& recordings, const SpeciesTable& table,
                   std::size_t batch_size, const MixupPolicy& mixup, Rng& rng,
                   FeatureSource& features, const BatchAugmentation& augmentation) {
  if (recordings.empty()) throw Error(Errc::kEmptyInput, "sample_batch: no recordings");
  mixup.validate();

  // Partner pool: scored species -> recordings with that scored primary label.
  std::vector<std::vector<std::size_t>> by_species(table.size());
  for (std::size_t i = 0; i < recordings.size(); ++i) {
    const auto& rec = recordings[i];
    if (!rec.is_scored_primary) continue;
    by_species[table.index_of(rec.labels.front())].push_back(i);
  }
  std::vector<std::size_t> partner_species;
  for (std::size_t k = 0; k < by_species.size(); ++k) {
    if (table.scored(k) && !by_species[k].empty()) partner_species.push_back(k);
  }

  Batch batch;
  batch.items.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    BatchItem item;
    item.recording_index = static_cast<std::size_t>(uniform_index(rng, recordings.size()));
    const Recording& rec = recordings[item.recording_index];
    item.chunks = features.window_features(rec, rng);
    item.labels = table.multi_hot(rec.labels);
    item.rating = rec.rating;

    if (!partner_species.empty() && bernoulli(rng, mixup.apply_probability)) {
      const auto& pool = by_species[partner_species[uniform_index(rng, partner_species.size())]];
      const Recording& partner = recordings[pool[uniform_index(rng, pool.size())]];
      const ChunkStack partner_chunks = features.window_features(partner, rng);
      const std::vector<double> partner_labels = table.multi_hot(partner.labels);
      const double lambda = mixup.sample_lambda(rng);
      std::vector<double> labels = item.labels;
      for (std::size_t c = 0; c < item.chunks.size(); ++c) {
        auto [spec, mixed_labels] = selective_mixup(item.chunks[c], item.labels, partner_chunks[c],
                                                    partner_labels, lambda,
                                                    partner.is_scored_primary);
        item.chunks[c] = std::move(spec);
        labels = std::move(mixed_labels);
      }
      item.labels = std::move(labels);
      item.mixed = true;
    }

    if (augmentation.spec_augment) {
      for (auto& chunk : item.chunks) {
        if (bernoulli(rng, augmentation.spec_augment_probability)) {
          chunk = spec_augment(chunk, *augmentation.spec_augment, rng);
        }
      }
    }
    batch.items.push_back(std::move(item));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SynthConfig::validate() const {
  const auto fail = [](const std::string& what) {
    throw Error(Errc::kInvalidArgument, "synth config: " + what);
  };
  if (n_species < 1) fail("n_species must be >= 1");
  if (head_count < 1) fail("head_count must be >= 1");
  if (!(zipf_exponent >= 0.0)) fail("zipf_exponent must be >= 0");
  if (!(clip_seconds >= 5.0)) fail("clip_seconds must be >= 5");
  if (sample_rate <= 0) fail("sample_rate must be positive");
  if (!(noise_rms >= 0.0)) fail("noise_rms must be >= 0");
  if (!(call_amplitude > 0.0 && call_amplitude <= 1.0)) fail("call_amplitude must be in (0, 1]");
  for (double p : {segment_call_probability, secondary_label_probability, unrated_probability,
                   soundscape_nocall_probability, soundscape_overlap_probability}) {
    if (!(p >= 0.0 && p <= 1.0)) fail("probabilities must be in [0, 1]");
  }
  if (n_calibration_soundscapes < 0 || n_test_soundscapes < 0) fail("soundscape counts must be >= 0");
  if (!(carrier_min_hz > 0.0 && carrier_min_hz <= carrier_max_hz)) fail("bad carrier range");
  if (carrier_max_hz >= sample_rate / 2.0) fail("carrier_max_hz exceeds Nyquist");
}

std::vector<int> zipf_counts(int n_species, int head_count, double exponent) {
  std::vector<int> counts(static_cast<std::size_t>(n_species));
  for (int r = 1; r <= n_species; ++r) {
    const double value = exponent == 1.0 ? static_cast<double>(head_count) / r
                                         : head_count / std::pow(static_cast<double>(r), exponent);
    counts[static_cast<std::size_t>(r - 1)] = std::max(1, static_cast<int>(std::floor(value)));
  }
  return counts;
}

std::vector<SpeciesMotif> synth_motifs(const SynthConfig& config) {
  config.validate();
  const SpectrogramParams defaults;
  const double mel_bin =
      (hz_to_mel(defaults.fmax) - hz_to_mel(defaults.fmin)) / (defaults.n_mels + 1);
  const double mel_lo = hz_to_mel(config.carrier_min_hz);
  const double mel_hi = hz_to_mel(config.carrier_max_hz);

  std::vector<SpeciesMotif> motifs;
  for (int k = 0; k < config.n_species; ++k) {
    SpeciesMotif m;
    m.name = fmt::format("sp{:02d}", k + 1);
    const double frac = config.n_species > 1 ? static_cast<double>(k) / (config.n_species - 1) : 0.0;
    const double mel = mel_lo + (mel_hi - mel_lo) * frac;
    m.carrier_hz = mel_to_hz(mel);
    // Half a mel bin of frequency deviation either side of the carrier.
    m.fm_depth_hz = 0.5 * (mel_to_hz(mel + mel_bin / 2) - mel_to_hz(mel - mel_bin / 2));
    m.fm_rate_hz = 5.0 + 3.0 * (k % 4);
    m.burst_s = 0.10 + 0.05 * (k % 3);
    m.gap_s = 0.08 + 0.04 * ((k / 3) % 3);
    m.n_bursts = 3 + (k % 4);
    if (m.low_hz() < defaults.fmin || m.high_hz() > defaults.fmax) {
      throw Error(Errc::kInvalidArgument,
                  fmt::format("synth: motif {} leaves the [{}, {}] Hz analysis band", m.name,
                              defaults.fmin, defaults.fmax));
    }
    motifs.push_back(std::move(m));
  }
  for (std::size_t k = 1; k < motifs.size(); ++k) {
    const double gap = hz_to_mel(motifs[k].low_hz()) - hz_to_mel(motifs[k - 1].high_hz());
    if (gap < 3.0 * mel_bin) {
      throw Error(Errc::kInvalidArgument,
                  fmt::format("synth: species {} and {} are {:.2f} mel bins apart (need >= 3); "
                              "widen the carrier range or use fewer species",
                              motifs[k - 1].name, motifs[k].name, gap / mel_bin));
    }
  }
  return motifs;
}

std::vector<float> noise_bed(std::size_t n, double target_rms, Rng& rng) {
  std::vector<double> x(n);
  double state = 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    state = 0.7 * state + 0.3 * sample_normal(rng);
    x[i] = state;
    acc += state * state;
  }
  const double scale = (n > 0 && acc > 0.0) ? target_rms / std::sqrt(acc / n) : 0.0;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(x[i] * scale);
  return out;
}

void render_motif(const SpeciesMotif& motif, double amplitude, std::size_t start, int sample_rate,
                  std::vector<float>& out) {
  const auto burst_len = static_cast<std::size_t>(std::llround(motif.burst_s * sample_rate));
  const auto stride =
      static_cast<std::size_t>(std::llround((motif.burst_s + motif.gap_s) * sample_rate));
  double phase = 0.0;
  for (int b = 0; b < motif.n_bursts; ++b) {
    const std::size_t burst_start = start + static_cast<std::size_t>(b) * stride;
    for (std::size_t i = 0; i < burst_len; ++i) {
      const std::size_t n = burst_start + i;
      if (n >= out.size()) return;
      const double t = static_cast<double>(n - start) / sample_rate;
      const double freq = motif.carrier_hz + motif.fm_depth_hz * std::sin(2.0 * M_PI * motif.fm_rate_hz * t);
      phase += 2.0 * M_PI * freq / sample_rate;
      const double env = std::sin(M_PI * static_cast<double>(i) / static_cast<double>(burst_len));
      out[n] = static_cast<float>(out[n] + amplitude * env * env * std::sin(phase));
    }
  }
}

namespace {

constexpr double kSegmentSeconds = 5.0;

void place_call(const SpeciesMotif& motif, int segment, const SynthConfig& config, Rng& rng,
                std::vector<float>& samples) {
  const double slack = std::max(0.0, kSegmentSeconds - motif.duration_s() - 0.1);
  const double offset_s = segment * kSegmentSeconds + 0.05 + uniform_real(rng, 0.0, slack);
  const auto start = static_cast<std::size_t>(std::llround(offset_s * config.sample_rate));
  const double amplitude = config.call_amplitude * uniform_real(rng, 0.6, 1.0);
  render_motif(motif, amplitude, start, config.sample_rate, samples);
}

std::vector<SegmentTruth> write_soundscapes(const SynthConfig& config,
                                            const std::vector<SpeciesMotif>& motifs,
                                            std::uint64_t seed, std::uint64_t stream,
                                            const std::string& prefix, int count,
                                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int n_segments = static_cast<int>(std::floor(config.clip_seconds / kSegmentSeconds));
  const auto n_samples = static_cast<std::size_t>(std::llround(config.clip_seconds * config.sample_rate));
  std::vector<SegmentTruth> truth;
  for (int i = 0; i < count; ++i) {
    Rng rng = derive_rng(mix_seed(seed, stream), static_cast<std::uint64_t>(i));
    AudioClip clip;
    clip.sample_rate = config.sample_rate;
    clip.samples = noise_bed(n_samples, config.noise_rms, rng);
    const std::string name = fmt::format("{}_{:04d}", prefix, i + 1);
    for (int s = 0; s < n_segments; ++s) {
      SegmentTruth row;
      row.recording = name;
      row.segment_index = s;
      if (!bernoulli(rng, config.soundscape_nocall_probability)) {
        const auto first = static_cast<std::size_t>(uniform_index(rng, motifs.size()));
        place_call(motifs[first], s, config, rng, clip.samples);
        row.labels.push_back(motifs[first].name);
        if (motifs.size() > 1 && bernoulli(rng, config.soundscape_overlap_probability)) {
          auto second = static_cast<std::size_t>(uniform_index(rng, motifs.size() - 1));
          if (second >= first) ++second;
          place_call(motifs[second], s, config, rng, clip.samples);
          row.labels.push_back(motifs[second].name);
          std::sort(row.labels.begin(), row.labels.end());
        }
      }
      truth.push_back(std::move(row));
    }
    save_wav(dir / (name + ".wav"), clip);
  }
  write_segment_truth(dir / "truth.csv", truth);
  return truth;
}

}  // namespace

SynthResult synth_dataset(const SynthConfig& config, std::uint64_t seed,
                          const std::filesystem::path& out_dir) {
  const auto motifs = synth_motifs(config);
  const auto counts = zipf_counts(config.n_species, config.head_count, config.zipf_exponent);
  const int n_segments = static_cast<int>(std::floor(config.clip_seconds / kSegmentSeconds));
  const auto n_samples = static_cast<std::size_t>(std::llround(config.clip_seconds * config.sample_rate));

  SynthResult result;
  for (const auto& m : motifs) result.species.push_back(m.name);

  const auto train_dir = out_dir / "train";
  std::filesystem::create_directories(train_dir);
  std::uint64_t file_index = 0;
  for (std::size_t k = 0; k < motifs.size(); ++k) {
    for (int i = 0; i < counts[k]; ++i) {
      Rng rng = derive_rng(mix_seed(seed, 0), file_index++);
      AudioClip clip;
      clip.sample_rate = config.sample_rate;
      clip.samples = noise_bed(n_samples, config.noise_rms, rng);
      const std::string name = fmt::format("{}_{:04d}", motifs[k].name, i + 1);

      std::vector<std::vector<std::string>> segment_labels(static_cast<std::size_t>(n_segments));
      std::vector<int> call_segments;
      for (int s = 0; s < n_segments; ++s) {
        if (bernoulli(rng, config.segment_call_probability)) call_segments.push_back(s);
      }
      if (call_segments.empty()) {
        call_segments.push_back(static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n_segments))));
      }
      for (int s : call_segments) {
        place_call(motifs[k], s, config, rng, clip.samples);
        segment_labels[static_cast<std::size_t>(s)].push_back(motifs[k].name);
      }

      Recording rec;
      rec.audio_path = train_dir / (name + ".wav");
      rec.labels.push_back(motifs[k].name);
      if (motifs.size() > 1 && bernoulli(rng, config.secondary_label_probability)) {
        auto other = static_cast<std::size_t>(uniform_index(rng, motifs.size() - 1));
        if (other >= k) ++other;
        const auto s = static_cast<std::size_t>(uniform_index(rng, static_cast<std::uint64_t>(n_segments)));
        place_call(motifs[other], static_cast<int>(s), config, rng, clip.samples);
        segment_labels[s].push_back(motifs[other].name);
        rec.labels.push_back(motifs[other].name);
      }
      if (bernoulli(rng, config.unrated_probability)) {
        rec.rating = 0.0;
      } else {
        rec.rating = 2.5 + 0.5 * static_cast<double>(uniform_index(rng, 6));
      }
      rec.is_scored_primary = true;

      for (int s = 0; s < n_segments; ++s) {
        SegmentTruth row;
        row.recording = name;
        row.segment_index = s;
        row.labels = segment_labels[static_cast<std::size_t>(s)];
        std::sort(row.labels.begin(), row.labels.end());
        result.train_truth.push_back(std::move(row));
      }
      save_wav(rec.audio_path, clip);
      result.train.push_back(std::move(rec));
    }
  }
  write_metadata(train_dir / "metadata.csv", result.train);
  write_segment_truth(train_dir / "truth.csv", result.train_truth);

  result.calibration_truth = write_soundscapes(config, motifs, seed, 1, "calib",
                                               config.n_calibration_soundscapes, out_dir / "calib");
  result.test_truth =
      write_soundscapes(config, motifs, seed, 2, "test", config.n_test_soundscapes, out_dir / "test");

  std::string species_csv = "species,carrier_hz,fm_depth_hz,recordings\n";
  for (std::size_t k = 0; k < motifs.size(); ++k) {
    species_csv += fmt::format("{},{:.3f},{:.3f},{}\n", motifs[k].name, motifs[k].carrier_hz,
                               motifs[k].fm_depth_hz, counts[k]);
  }
  write_text_file(out_dir / "species.csv", species_csv);
  return result;
}

}  // namespace birdsed
