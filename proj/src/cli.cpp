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

#include "birdsed/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "birdsed/audio_io.hpp"
#include "birdsed/calibrate.hpp"
#include "birdsed/config.hpp"
#include "birdsed/csv.hpp"
#include "birdsed/dataset.hpp"
#include "birdsed/dsp.hpp"
#include "birdsed/error.hpp"
#include "birdsed/metrics.hpp"
#include "birdsed/model.hpp"
#include "birdsed/tensor_file.hpp"
#include "birdsed/train.hpp"

namespace birdsed::cli {

namespace fs = std::filesystem;

namespace {

/// Bad flags, bad config, or unresolvable input paths: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  KeyValueConfig raw;
  SpectrogramParams spectrogram;
  SynthConfig synth;
  TrainConfig train;
  bool n_classes_set = false;
  std::vector<std::string> scored;
  std::string background_dir;
  double background_probability = 0.5;
  double background_snr_min = 0.0;
  double background_snr_max = 20.0;
  std::size_t cache_bytes = std::size_t{1} << 30;
  int infer_threads = 0;
  double grid_step = 0.05;
  int histogram_bins = 20;
  double global_threshold = 0.5;
  std::map<std::string, std::string> paths;

  FeatureConfig features() const {
    FeatureConfig f;
    f.spectrogram = spectrogram;
    return f;
  }
};

const std::vector<std::string>& path_keys() {
  static const std::vector<std::string> keys{"metadata", "audio", "weights", "predictions",
                                             "truth",    "apply", "decisions", "counts"};
  return keys;
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys = TrainConfig::known_keys();
  for (const char* k :
       {"spec.sample_rate", "spec.n_fft", "spec.hop_size", "spec.n_mels", "spec.fmin", "spec.fmax", "spec.power",
        "synth.n_species", "synth.head_count", "synth.zipf_exponent", "synth.clip_seconds", "synth.sample_rate",
        "synth.noise_rms", "synth.call_amplitude", "synth.segment_call_probability",
        "synth.secondary_label_probability", "synth.unrated_probability", "synth.calibration_soundscapes",
        "synth.test_soundscapes", "synth.nocall_probability", "synth.overlap_probability",
        "synth.carrier_min_hz", "synth.carrier_max_hz", "species.scored", "background.dir",
        "background.probability", "background.snr_min_db", "background.snr_max_db", "cache.megabytes",
        "infer.threads", "calibrate.grid_step", "calibrate.histogram_bins", "calibrate.global_threshold"}) {
    keys.emplace_back(k);
  }
  for (const auto& p : path_keys()) keys.push_back("paths." + p);
  return keys;
}

void write_spectrogram(const SpectrogramParams& s, KeyValueConfig& out) {
  out.set("spec.sample_rate", s.sample_rate);
  out.set("spec.n_fft", s.n_fft);
  out.set("spec.hop_size", s.hop_size);
  out.set("spec.n_mels", s.n_mels);
  out.set("spec.fmin", s.fmin);
  out.set("spec.fmax", s.fmax);
  out.set("spec.power", s.power);
}

SpectrogramParams read_spectrogram(const KeyValueConfig& in) {
  SpectrogramParams s;
  s.sample_rate = static_cast<int>(in.get_int("spec.sample_rate", s.sample_rate));
  s.n_fft = static_cast<int>(in.get_int("spec.n_fft", s.n_fft));
  s.hop_size = static_cast<int>(in.get_int("spec.hop_size", s.hop_size));
  s.n_mels = static_cast<int>(in.get_int("spec.n_mels", s.n_mels));
  s.fmin = in.get_double("spec.fmin", s.fmin);
  s.fmax = in.get_double("spec.fmax", s.fmax);
  s.power = in.get_double("spec.power", s.power);
  s.validate();
  return s;
}

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  try {
    if (!path.empty()) rc.raw = KeyValueConfig::load(path);
    const auto unknown = rc.raw.unknown_keys(known_config_keys());
    if (!unknown.empty()) {
      std::string msg = fmt::format("config '{}': unknown keys:", path);
      for (const auto& k : unknown) msg += " " + k;
      throw UsageError(msg);
    }
    const auto& c = rc.raw;
    rc.spectrogram = read_spectrogram(c);

    auto& s = rc.synth;
    s.n_species = static_cast<int>(c.get_int("synth.n_species", s.n_species));
    s.head_count = static_cast<int>(c.get_int("synth.head_count", s.head_count));
    s.zipf_exponent = c.get_double("synth.zipf_exponent", s.zipf_exponent);
    s.clip_seconds = c.get_double("synth.clip_seconds", s.clip_seconds);
    s.sample_rate = static_cast<int>(c.get_int("synth.sample_rate", s.sample_rate));
    s.noise_rms = c.get_double("synth.noise_rms", s.noise_rms);
    s.call_amplitude = c.get_double("synth.call_amplitude", s.call_amplitude);
    s.segment_call_probability = c.get_double("synth.segment_call_probability", s.segment_call_probability);
    s.secondary_label_probability = c.get_double("synth.secondary_label_probability", s.secondary_label_probability);
    s.unrated_probability = c.get_double("synth.unrated_probability", s.unrated_probability);
    s.n_calibration_soundscapes =
        static_cast<int>(c.get_int("synth.calibration_soundscapes", s.n_calibration_soundscapes));
    s.n_test_soundscapes = static_cast<int>(c.get_int("synth.test_soundscapes", s.n_test_soundscapes));
    s.soundscape_nocall_probability = c.get_double("synth.nocall_probability", s.soundscape_nocall_probability);
    s.soundscape_overlap_probability = c.get_double("synth.overlap_probability", s.soundscape_overlap_probability);
    s.carrier_min_hz = c.get_double("synth.carrier_min_hz", s.carrier_min_hz);
    s.carrier_max_hz = c.get_double("synth.carrier_max_hz", s.carrier_max_hz);
    s.validate();

    rc.train = TrainConfig::read(c);
    rc.n_classes_set = c.contains("model.n_classes");
    if (!c.contains("model.n_mels")) rc.train.model.n_mels = rc.spectrogram.n_mels;
    rc.scored = c.get_list("species.scored");
    rc.background_dir = c.get_string("background.dir", "");
    rc.background_probability = c.get_double("background.probability", rc.background_probability);
    rc.background_snr_min = c.get_double("background.snr_min_db", rc.background_snr_min);
    rc.background_snr_max = c.get_double("background.snr_max_db", rc.background_snr_max);
    const long long cache_mb = c.get_int("cache.megabytes", 1024);
    if (cache_mb < 0) throw UsageError("cache.megabytes must be >= 0");
    rc.cache_bytes = static_cast<std::size_t>(cache_mb) << 20;
    rc.infer_threads = static_cast<int>(c.get_int("infer.threads", 0));
    rc.grid_step = c.get_double("calibrate.grid_step", rc.grid_step);
    quantile_grid(rc.grid_step);
    rc.histogram_bins = static_cast<int>(c.get_int("calibrate.histogram_bins", rc.histogram_bins));
    if (rc.histogram_bins < 1) throw UsageError("calibrate.histogram_bins must be >= 1");
    rc.global_threshold = c.get_double("calibrate.global_threshold", rc.global_threshold);
    if (!(rc.global_threshold >= 0.0 && rc.global_threshold <= 1.0)) {
      throw UsageError("calibrate.global_threshold must be in [0, 1]");
    }
    for (const auto& p : path_keys()) {
      if (auto v = c.find("paths." + p)) rc.paths[p] = *v;
    }
  } catch (const Error& e) {
    // Malformed or out-of-range configuration is a usage problem.
    throw UsageError(fmt::format("config: {}", e.what()));
  }
  return rc;
}

/// Flag value if given, else paths.<key> from the config, else empty.
std::string resolve_path(const RunConfig& rc, const std::string& flag_value, const std::string& key) {
  if (!flag_value.empty()) return flag_value;
  auto it = rc.paths.find(key);
  return it == rc.paths.end() ? std::string{} : it->second;
}

fs::path require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(fmt::format("{} is required (flag or paths.* config key)", what));
  if (!fs::is_regular_file(path)) throw UsageError(fmt::format("{} '{}' does not exist", what, path));
  return path;
}

fs::path require_dir(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(fmt::format("{} is required (flag or paths.* config key)", what));
  if (!fs::is_directory(path)) throw UsageError(fmt::format("{} '{}' is not a directory", what, path));
  return path;
}

void ensure_out_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) {
    throw Error(Errc::kIo, fmt::format("cannot create output directory '{}'", out.string()));
  }
}

std::vector<fs::path> list_wavs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void write_counts(const fs::path& path, const std::vector<std::string>& names, const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> order(names.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return counts[a] != counts[b] ? counts[a] > counts[b] : names[a] < names[b];
  });
  std::string text = "species,count\n";
  for (auto i : order) text += fmt::format("{},{}\n", names[i], counts[i]);
  write_text_file(path, text);
}

std::map<std::string, double> read_counts(const fs::path& path) {
  const CsvTable csv = read_csv(path);
  const auto col_sp = csv.column("species");
  const auto col_n = csv.column("count");
  std::map<std::string, double> out;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    out[csv.rows[r][col_sp]] =
        parse_double_field(csv.rows[r][col_n], fmt::format("'{}' line {}", path.string(), csv.line_numbers[r]));
  }
  return out;
}

void print_counts(std::ostream& out, const std::vector<std::string>& names, const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> order(names.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return counts[a] != counts[b] ? counts[a] > counts[b] : names[a] < names[b];
  });
  out << fmt::format("{:<12} {:>10}\n", "species", "recordings");
  for (auto i : order) out << fmt::format("{:<12} {:>10}\n", names[i], counts[i]);
}

/// Metadata with species sorted by name so class order is stable.
std::vector<Recording> load_training_set(const fs::path& metadata, const RunConfig& rc, SpeciesTable& table) {
  SpeciesTable discovered;
  parse_metadata(metadata, discovered, UnknownSpecies::kAdd);
  std::vector<std::string> names = discovered.names();
  std::sort(names.begin(), names.end());
  table = SpeciesTable(names);
  if (!rc.scored.empty()) table.set_scored(rc.scored);
  auto recordings = parse_metadata(metadata, table, UnknownSpecies::kReject);
  table = class_distribution(recordings, table);
  return recordings;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

struct Context {
  RunConfig rc;
  std::uint64_t seed = 0;
  fs::path out;
  std::ostream* os = nullptr;
};

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const Context& ctx) {
  ensure_out_dir(ctx.out);
  const SynthResult result = synth_dataset(ctx.rc.synth, ctx.seed, ctx.out);
  SpeciesTable table(result.species);
  table = class_distribution(result.train, table);
  write_counts(ctx.out / "class_counts.csv", table.names(), table.counts());
  auto& os = *ctx.os;
  print_counts(os, table.names(), table.counts());
  os << fmt::format("{} training recordings, {} calibration and {} test segments written to {}\n",
                    result.train.size(), result.calibration_truth.size(), result.test_truth.size(),
                    ctx.out.string());
  return kOk;
}

struct PreprocessOptions {
  std::string metadata;
};

int cmd_preprocess(const Context& ctx, const PreprocessOptions& opt) {
  const fs::path metadata = require_file(resolve_path(ctx.rc, opt.metadata, "metadata"), "metadata file");
  SpeciesTable table;
  const auto recordings = load_training_set(metadata, ctx.rc, table);
  ensure_out_dir(ctx.out / "features");
  FeatureSource features(ctx.rc.features(), 0);
  std::string index = "recording,tensor,labels,rating\n";
  for (std::size_t i = 0; i < recordings.size(); ++i) {
    Rng rng = derive_rng(ctx.seed, i);
    const ChunkStack stack = features.window_features(recordings[i], rng);
    const auto rows = static_cast<std::uint64_t>(stack.front().values.rows());
    const auto cols = static_cast<std::uint64_t>(stack.front().values.cols());
    std::vector<float> values;
    values.reserve(stack.size() * rows * cols);
    for (const auto& chunk : stack) {
      for (Eigen::Index e = 0; e < chunk.values.size(); ++e) values.push_back(static_cast<float>(chunk.values.data()[e]));
    }
    const std::vector<std::uint64_t> dims{stack.size(), rows, cols};
    const std::string name = recordings[i].id() + ".bsdt";
    write_tensor_file(ctx.out / "features" / name, dims, values);
    index += fmt::format("{},features/{},{},{}\n", recordings[i].id(), name, join(recordings[i].labels),
                         format_double(recordings[i].rating));
  }
  write_text_file(ctx.out / "features.csv", index);
  write_counts(ctx.out / "class_counts.csv", table.names(), table.counts());
  print_counts(*ctx.os, table.names(), table.counts());
  *ctx.os << fmt::format("{} recordings preprocessed into {}\n", recordings.size(), (ctx.out / "features").string());
  return kOk;
}

struct TrainOptions {
  std::string metadata;
  bool dry_run = false;
};

int cmd_train(const Context& ctx, const TrainOptions& opt) {
  const fs::path metadata = require_file(resolve_path(ctx.rc, opt.metadata, "metadata"), "metadata file");
  if (!ctx.rc.background_dir.empty()) require_dir(ctx.rc.background_dir, "background.dir");
  SpeciesTable table;
  const auto recordings = load_training_set(metadata, ctx.rc, table);
  TrainConfig config = ctx.rc.train;
  if (!ctx.rc.n_classes_set) config.model.n_classes = static_cast<int>(table.size());
  if (config.model.n_classes != static_cast<int>(table.size())) {
    throw UsageError(fmt::format("model.n_classes is {} but the metadata lists {} species", config.model.n_classes,
                                 table.size()));
  }
  config.validate();
  auto& os = *ctx.os;
  if (opt.dry_run) {
    const long long steps = config.steps_per_epoch > 0
                                ? config.steps_per_epoch
                                : static_cast<long long>((recordings.size() + config.batch_size - 1) /
                                                         static_cast<std::size_t>(config.batch_size));
    os << fmt::format("dry run: {} recordings, {} species ({} scored), {} epochs of about {} steps; config OK\n",
                      recordings.size(), table.size(), table.n_scored(), config.epochs, steps);
    return kOk;
  }
  ensure_out_dir(ctx.out);
  FeatureSource features(ctx.rc.features(), ctx.rc.cache_bytes);
  if (!ctx.rc.background_dir.empty()) {
    BackgroundNoise noise;
    for (const auto& f : list_wavs(ctx.rc.background_dir)) noise.clips.push_back(load_wav(f));
    noise.probability = ctx.rc.background_probability;
    noise.snr_min_db = ctx.rc.background_snr_min;
    noise.snr_max_db = ctx.rc.background_snr_max;
    features.set_background(std::move(noise));
  }
  const TrainResult result = train(recordings, table, config, features, ctx.seed, [&](const EpochStats& e) {
    os << fmt::format("epoch {:>3}  step {:>6}  lr {:.3e}  loss {:.5f}  val_micro_f1 {:.4f}\n", e.epoch, e.step,
                      e.lr, e.loss, e.val_micro_f1);
    os.flush();
  });

  KeyValueConfig meta;
  write_spectrogram(ctx.rc.spectrogram, meta);
  meta.set("species.names", join(table.names()));
  std::vector<std::string> scored;
  std::vector<std::string> counts;
  for (std::size_t k = 0; k < table.size(); ++k) {
    if (table.scored(k)) scored.push_back(table.name(k));
    counts.push_back(std::to_string(table.counts()[k]));
  }
  meta.set("species.scored", join(scored));
  meta.set("species.counts", join(counts));
  meta.set("train.seed", std::to_string(ctx.seed));
  save_weights(result.weights, ctx.out / "weights.bin", meta);
  write_epoch_log(ctx.out / "train_log.csv", result.epochs);
  write_step_log(ctx.out / "steps.csv", result.steps);
  write_counts(ctx.out / "class_counts.csv", table.names(), table.counts());
  KeyValueConfig effective = ctx.rc.raw;
  config.write(effective);
  write_spectrogram(ctx.rc.spectrogram, effective);
  effective.save(ctx.out / "effective_config.txt");
  os << fmt::format("weights written to {}\n", (ctx.out / "weights.bin").string());
  return kOk;
}

struct ModelBundle {
  Weights<float> weights;
  SpectrogramParams spectrogram;
  std::vector<std::string> species;
};

ModelBundle load_bundle(const fs::path& path) {
  LoadedWeights loaded = load_weights(path);
  ModelBundle b;
  b.spectrogram = read_spectrogram(loaded.metadata);
  b.species = loaded.metadata.get_list("species.names");
  if (b.species.size() != static_cast<std::size_t>(loaded.weights.config().n_classes)) {
    throw Error(Errc::kCorruptFile, fmt::format("weights '{}': species list does not match the class count",
                                                path.string()));
  }
  if (b.spectrogram.n_mels != loaded.weights.config().n_mels) {
    throw Error(Errc::kCorruptFile, fmt::format("weights '{}': n_mels differs between model and spectrogram",
                                                path.string()));
  }
  b.weights = std::move(loaded.weights);
  return b;
}

/// Full 5 s chunks of a clip at the model rate; a clip shorter than one chunk
/// is tiled to a single chunk.
std::vector<AudioClip> segment_clip(const AudioClip& clip, const SpectrogramParams& params) {
  const AudioClip audio = resample(clip, params.sample_rate);
  const auto chunk_len = static_cast<std::size_t>(std::llround(5.0 * params.sample_rate));
  if (audio.samples.empty()) throw Error(Errc::kEmptyInput, "audio file has no samples");
  std::vector<AudioClip> chunks;
  if (audio.samples.size() < chunk_len) {
    chunks.push_back(tile_crop(audio, chunk_len, 0));
    return chunks;
  }
  for (std::size_t start = 0; start + chunk_len <= audio.samples.size(); start += chunk_len) {
    AudioClip c;
    c.sample_rate = audio.sample_rate;
    c.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     audio.samples.begin() + static_cast<std::ptrdiff_t>(start + chunk_len));
    chunks.push_back(std::move(c));
  }
  return chunks;
}

struct InferOptions {
  std::string weights;
  std::string audio;
};

int cmd_infer(const Context& ctx, const InferOptions& opt) {
  const fs::path weights_path = require_file(resolve_path(ctx.rc, opt.weights, "weights"), "weights file");
  const fs::path audio_dir = require_dir(resolve_path(ctx.rc, opt.audio, "audio"), "audio directory");
  const ModelBundle bundle = load_bundle(weights_path);
  ensure_out_dir(ctx.out);
  const auto files = list_wavs(audio_dir);

  struct FileResult {
    std::vector<std::vector<double>> probs;
    std::string error;
  };
  std::vector<FileResult> results(files.size());
  int threads = ctx.rc.infer_threads > 0 ? ctx.rc.infer_threads
                                         : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(1, files.size()))));

  const auto t0 = std::chrono::steady_clock::now();
  const auto worker = [&](int w) {
    MelExtractor extractor(bundle.spectrogram);
    for (std::size_t i = static_cast<std::size_t>(w); i < files.size(); i += static_cast<std::size_t>(threads)) {
      try {
        const auto chunks = segment_clip(load_wav(files[i]), bundle.spectrogram);
        std::vector<ClipInput<float>> batch;
        for (const auto& c : chunks) batch.push_back({extractor(c).values.cast<float>()});
        const auto out = forward(bundle.weights, batch, Mode::kEval);
        for (Eigen::Index r = 0; r < out.clip.rows(); ++r) {
          std::vector<double> row(static_cast<std::size_t>(out.clip.cols()));
          for (Eigen::Index k = 0; k < out.clip.cols(); ++k) row[static_cast<std::size_t>(k)] = out.clip(r, k);
          results[i].probs.push_back(std::move(row));
        }
      } catch (const Error& e) {
        results[i].probs.clear();
        results[i].error = e.what();
      }
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  PredictionTable table;
  table.species = bundle.species;
  std::string report = "file,status,segments,message\n";
  std::size_t n_chunks = 0;
  std::size_t skipped = 0;
  auto& os = *ctx.os;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const std::string id = files[i].stem().string();
    if (!results[i].error.empty()) {
      ++skipped;
      std::string msg = results[i].error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      report += fmt::format("{},skipped,0,{}\n", files[i].filename().string(), msg);
      os << fmt::format("warning: skipped {}: {}\n", files[i].string(), results[i].error);
      continue;
    }
    for (std::size_t s = 0; s < results[i].probs.size(); ++s) {
      table.keys.push_back({id, static_cast<int>(s)});
      table.probabilities.push_back(results[i].probs[s]);
    }
    n_chunks += results[i].probs.size();
    report += fmt::format("{},ok,{},\n", files[i].filename().string(), results[i].probs.size());
  }
  write_predictions(ctx.out / "predictions.csv", table);
  write_text_file(ctx.out / "infer_report.csv", report);
  os << fmt::format("{} files, {} segments scored, {} skipped\n", files.size(), n_chunks, skipped);
  if (n_chunks > 0) {
    os << fmt::format("latency: {:.2f} ms per 5 s chunk ({} chunks, {:.3f} s wall, {} thread{})\n",
                      1000.0 * seconds / static_cast<double>(n_chunks), n_chunks, seconds, threads,
                      threads == 1 ? "" : "s");
  } else {
    os << "latency: n/a (no chunks scored)\n";
  }
  return kOk;
}

struct CalibrateOptions {
  std::string predictions;
  std::string truth;
  std::string apply;
  std::string counts;
  std::optional<double> penalize;
  std::optional<double> global_threshold;
};

std::vector<std::string> scored_species(const RunConfig& rc, const PredictionTable& table) {
  if (rc.scored.empty()) return table.species;
  for (const auto& s : rc.scored) {
    if (std::find(table.species.begin(), table.species.end(), s) == table.species.end()) {
      throw Error(Errc::kKeyMismatch, fmt::format("scored species '{}' has no predictions", s));
    }
  }
  return rc.scored;
}

int cmd_calibrate(const Context& ctx, const CalibrateOptions& opt) {
  auto& os = *ctx.os;
  const std::string apply_path = resolve_path(ctx.rc, opt.apply, "apply");
  if (opt.penalize) {
    if (*opt.penalize < 0.0) throw UsageError("--penalize factor must be >= 0");
    const std::string source = !apply_path.empty() ? apply_path : resolve_path(ctx.rc, opt.predictions, "predictions");
    const fs::path preds_path = require_file(source, "predictions to penalize (--apply or --predictions)");
    const fs::path counts_path = require_file(resolve_path(ctx.rc, opt.counts, "counts"), "class counts file");
    const PredictionTable table = read_predictions(preds_path);
    const auto counts_by_name = read_counts(counts_path);
    std::vector<double> counts;
    for (const auto& s : table.species) {
      auto it = counts_by_name.find(s);
      if (it == counts_by_name.end()) throw Error(Errc::kKeyMismatch, fmt::format("no class count for '{}'", s));
      counts.push_back(it->second);
    }
    ensure_out_dir(ctx.out);
    const PredictionTable pen = penalize(table, counts, *opt.penalize);
    const auto scored = scored_species(ctx.rc, pen);
    const double tau = opt.global_threshold.value_or(ctx.rc.global_threshold);
    const ThresholdTable thresholds = global_thresholds(scored, tau);
    write_predictions(ctx.out / "penalized.csv", pen);
    write_thresholds(ctx.out / "thresholds.csv", thresholds);
    write_segment_truth(ctx.out / "decisions.csv", apply_thresholds(pen, thresholds, scored));
    os << fmt::format("penalized {} segments with factor {} and threshold {}\n", pen.size(),
                      format_double(*opt.penalize), format_double(tau));
    return kOk;
  }

  ThresholdTable thresholds;
  std::vector<std::string> scored;
  if (opt.global_threshold) {
    if (!(*opt.global_threshold >= 0.0 && *opt.global_threshold <= 1.0)) {
      throw UsageError("--global-threshold must be in [0, 1]");
    }
    const std::string source = !apply_path.empty() ? apply_path : resolve_path(ctx.rc, opt.predictions, "predictions");
    const PredictionTable table = read_predictions(require_file(source, "predictions file"));
    scored = scored_species(ctx.rc, table);
    thresholds = global_thresholds(scored, *opt.global_threshold);
    ensure_out_dir(ctx.out);
  } else {
    const fs::path preds_path = require_file(resolve_path(ctx.rc, opt.predictions, "predictions"), "predictions file");
    const fs::path truth_path = require_file(resolve_path(ctx.rc, opt.truth, "truth"), "truth file");
    if (!apply_path.empty()) require_file(apply_path, "predictions to apply");
    const PredictionTable table = read_predictions(preds_path);
    const auto truth = read_segment_truth(truth_path);
    const auto call = call_labels(table, truth);
    scored = scored_species(ctx.rc, table);
    const auto grid = quantile_grid(ctx.rc.grid_step);
    std::vector<GridPoint> curve;
    thresholds = fit_class_thresholds(table, call, grid, scored, &curve);
    ensure_out_dir(ctx.out);
    write_grid_curve(ctx.out / "threshold_grid.csv", curve);
    write_score_histogram(ctx.out / "score_histogram.csv", table, call, ctx.rc.histogram_bins);
    os << fmt::format("{:<12} {:>8} {:>10} {:>8}\n", "species", "quantile", "threshold", "score");
    for (const auto& e : thresholds) {
      os << fmt::format("{:<12} {:>8.2f} {:>10.4f} {:>8.4f}\n", e.species, e.quantile, e.threshold, e.score);
    }
  }
  write_thresholds(ctx.out / "thresholds.csv", thresholds);
  if (!apply_path.empty()) {
    const PredictionTable target = read_predictions(apply_path);
    write_segment_truth(ctx.out / "decisions.csv", apply_thresholds(target, thresholds, scored));
    os << fmt::format("decisions for {} segments written to {}\n", target.size(),
                      (ctx.out / "decisions.csv").string());
  }
  return kOk;
}

struct EvaluateOptions {
  std::string decisions;
  std::string truth;
};

int cmd_evaluate(const Context& ctx, const EvaluateOptions& opt) {
  const fs::path dec_path = require_file(resolve_path(ctx.rc, opt.decisions, "decisions"), "decisions file");
  const fs::path truth_path = require_file(resolve_path(ctx.rc, opt.truth, "truth"), "truth file");
  const F1Report report = evaluate_segments(read_segment_truth(dec_path), read_segment_truth(truth_path));
  ensure_out_dir(ctx.out);
  write_metrics_report(ctx.out / "metrics.csv", report);
  auto& os = *ctx.os;
  os << fmt::format("{:<12} {:>5} {:>5} {:>5} {:>8}\n", "class", "tp", "fp", "fn", "f1");
  for (const auto& c : report.classes) {
    os << fmt::format("{:<12} {:>5} {:>5} {:>5} {:>8.4f}\n", c.name, c.tp, c.fp, c.fn, c.f1());
  }
  os << fmt::format("micro_f1 {:.6f}\nmacro_f1 {:.6f}\n", report.micro, report.macro);
  return kOk;
}

struct GradcamOptions {
  std::string weights;
  std::string audio;
  int segment = 0;
  std::string species;
};

std::string heatmap_svg(const MatrixT<double>& cam, int cell) {
  const auto rows = static_cast<int>(cam.rows());
  const auto cols = static_cast<int>(cam.cols());
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" shape-rendering=\"crispEdges\">\n",
      cols * cell, rows * cell);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = std::clamp(cam(r, c), 0.0, 1.0);
      const int red = static_cast<int>(std::lround(255 * v));
      const int blue = static_cast<int>(std::lround(255 * (1.0 - v)));
      // Low mel rows at the bottom, as in a spectrogram plot.
      svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"rgb({},{},{})\"/>\n", c * cell,
                         (rows - 1 - r) * cell, cell, cell, red, 32, blue);
    }
  }
  svg += "</svg>\n";
  return svg;
}

int cmd_gradcam(const Context& ctx, const GradcamOptions& opt) {
  const fs::path weights_path = require_file(resolve_path(ctx.rc, opt.weights, "weights"), "weights file");
  const fs::path audio_path = require_file(opt.audio, "audio file");
  const ModelBundle bundle = load_bundle(weights_path);
  const auto it = std::find(bundle.species.begin(), bundle.species.end(), opt.species);
  if (it == bundle.species.end()) throw UsageError(fmt::format("--species '{}' is not a model class", opt.species));
  const int k = static_cast<int>(it - bundle.species.begin());
  const auto chunks = segment_clip(load_wav(audio_path), bundle.spectrogram);
  if (opt.segment < 0 || static_cast<std::size_t>(opt.segment) >= chunks.size()) {
    throw UsageError(fmt::format("--segment {} outside [0, {})", opt.segment, chunks.size()));
  }
  const MelSpectrogram mel = melspectrogram(chunks[static_cast<std::size_t>(opt.segment)], bundle.spectrogram);
  const Weights<double> weights = bundle.weights.cast<double>();
  const MatrixT<double> cam = grad_cam(weights, MatrixT<double>(mel.values), k);
  ensure_out_dir(ctx.out);
  std::string csv;
  for (Eigen::Index r = 0; r < cam.rows(); ++r) {
    for (Eigen::Index c = 0; c < cam.cols(); ++c) {
      if (c > 0) csv += ',';
      csv += fmt::format("{:.6f}", cam(r, c));
    }
    csv += '\n';
  }
  write_text_file(ctx.out / "gradcam.csv", csv);
  write_text_file(ctx.out / "gradcam.svg", heatmap_svg(cam, 16));
  const auto out = forward(weights, std::vector<ClipInput<double>>{{MatrixT<double>(mel.values)}}, Mode::kEval);
  *ctx.os << fmt::format("grad-cam {}x{} for {} on segment {} (clipwise {:.4f}) written to {}\n", cam.rows(),
                         cam.cols(), opt.species, opt.segment, out.clip(0, k), (ctx.out / "gradcam.csv").string());
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bird call sound event detection: synthetic data, training, inference, calibration and scoring.",
               "birdsed"};
  app.require_subcommand(1);
  app.fallthrough();
  app.get_formatter()->column_width(34);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  app.add_option("--config", config_path, "Key-value config file (key = value lines)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed; required, no wall-clock seeding")->required();
  app.add_option("--out", out_dir, "Output directory; every file a command writes goes here")->required();

  auto* synth = app.add_subcommand("synth", "Render the long-tailed synthetic dataset and print class counts");

  PreprocessOptions pre;
  auto* preprocess = app.add_subcommand("preprocess", "Compute 6-chunk log-mel tensors for every training recording");
  preprocess->add_option("--metadata", pre.metadata, "Training metadata CSV (filename,labels,rating)");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train the SED model; writes weights.bin and train_log.csv");
  train_cmd->add_option("--metadata", tr.metadata, "Training metadata CSV (filename,labels,rating)");
  train_cmd->add_flag("--dry-run", tr.dry_run, "Validate config and inputs, then exit without training");

  InferOptions inf;
  auto* infer = app.add_subcommand("infer", "Score every 5 s segment of every .wav file in a directory");
  infer->add_option("--weights", inf.weights, "Weights file written by train");
  infer->add_option("--audio", inf.audio, "Directory of .wav files");

  CalibrateOptions cal;
  auto* calibrate = app.add_subcommand("calibrate", "Fit class-wise quantile thresholds or apply penalization");
  calibrate->add_option("--predictions", cal.predictions, "Calibration predictions CSV from infer");
  calibrate->add_option("--truth", cal.truth, "Segment truth CSV; only call versus nocall is used");
  calibrate->add_option("--apply", cal.apply, "Predictions CSV to turn into decisions.csv");
  calibrate->add_option("--penalize", cal.penalize, "Penalty factor; subtract factor * x_i / sum(x) instead of fitting");
  calibrate->add_option("--counts", cal.counts, "Class counts CSV (species,count) used by --penalize");
  calibrate->add_option("--global-threshold", cal.global_threshold, "One threshold for every species instead of fitting");

  EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score decisions against truth: per-class, micro and macro F1");
  evaluate->add_option("--decisions", ev.decisions, "Decisions CSV (recording,segment_index,labels)");
  evaluate->add_option("--truth", ev.truth, "Truth CSV (recording,segment_index,labels)");

  GradcamOptions gc;
  auto* gradcam = app.add_subcommand("gradcam", "Grad-CAM heatmap of one segment for one species");
  gradcam->add_option("--weights", gc.weights, "Weights file written by train");
  gradcam->add_option("--audio", gc.audio, "Audio file (.wav)")->required();
  gradcam->add_option("--segment", gc.segment, "Zero-based 5 s segment index")->capture_default_str();
  gradcam->add_option("--species", gc.species, "Target species name")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  try {
    Context ctx;
    ctx.rc = load_run_config(config_path);
    ctx.seed = seed;
    ctx.out = out_dir;
    ctx.os = &out;
    if (synth->parsed()) return cmd_synth(ctx);
    if (preprocess->parsed()) return cmd_preprocess(ctx, pre);
    if (train_cmd->parsed()) return cmd_train(ctx, tr);
    if (infer->parsed()) return cmd_infer(ctx, inf);
    if (calibrate->parsed()) return cmd_calibrate(ctx, cal);
    if (evaluate->parsed()) return cmd_evaluate(ctx, ev);
    if (gradcam->parsed()) return cmd_gradcam(ctx, gc);
    err << "error: no command given\n";
    return kUsageError;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return kDomainError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDomainError;
  }
}

}  // namespace birdsed::cli
