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

#include "birdsed/augment.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "birdsed/error.hpp"

namespace birdsed {

namespace {

double rms(const std::vector<float>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

}  // namespace

void MixupPolicy::validate() const {
  if (!(beta_alpha > 0.0)) throw Error(Errc::kInvalidArgument, "mixup: beta_alpha must be > 0");
  if (!(apply_probability >= 0.0 && apply_probability <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "mixup: apply_probability must be in [0, 1]");
  }
}

double MixupPolicy::sample_lambda(Rng& rng) const {
  return sample_beta(rng, beta_alpha, beta_alpha);
}

double background_gain(const AudioClip& clip, const AudioClip& noise, double snr_db) {
  const double noise_rms = rms(noise.samples);
  if (noise_rms == 0.0) throw Error(Errc::kSilentInput, "mix_background: noise clip is silent");
  const double clip_rms = rms(clip.samples);
  const double ratio = std::pow(10.0, -snr_db / 20.0);
  if (clip_rms == 0.0) return ratio;
  return clip_rms / noise_rms * ratio;
}

AudioClip mix_background(const AudioClip& clip, const AudioClip& noise, double snr_db) {
  if (clip.sample_rate != noise.sample_rate) {
    throw Error(Errc::kInvalidArgument,
                fmt::format("mix_background: rates differ ({} vs {})", clip.sample_rate,
                            noise.sample_rate));
  }
  if (noise.samples.empty()) throw Error(Errc::kSilentInput, "mix_background: noise clip is empty");

  AudioClip fitted;
  fitted.sample_rate = noise.sample_rate;
  fitted.samples.resize(clip.samples.size());
  for (std::size_t i = 0; i < fitted.samples.size(); ++i) {
    fitted.samples[i] = noise.samples[i % noise.samples.size()];
  }
  const double gain = background_gain(clip, fitted, snr_db);

  std::vector<double> mixed(clip.samples.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    mixed[i] = clip.samples[i] + gain * fitted.samples[i];
    peak = std::max(peak, std::abs(mixed[i]));
  }
  const double scale = peak > 1.0 ? 1.0 / peak : 1.0;
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.resize(mixed.size());
  for (std::size_t i = 0; i < mixed.size(); ++i) out.samples[i] = static_cast<float>(mixed[i] * scale);
  return out;
}

std::pair<MelSpectrogram, LabelVector> selective_mixup(const MelSpectrogram& spec_a,
                                                       const LabelVector& labels_a,
                                                       const MelSpectrogram& spec_b,
                                                       const LabelVector& labels_b, double lambda,
                                                       bool partner_is_scored) {
  if (!partner_is_scored) {
    throw Error(Errc::kNotScored, "selective_mixup: partner recording is not a scored species");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(Errc::kInvalidArgument, fmt::format("selective_mixup: lambda {} outside [0, 1]", lambda));
  }
  if (spec_a.values.rows() != spec_b.values.rows() || spec_a.values.cols() != spec_b.values.cols()) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("selective_mixup: spectrogram shapes {}x{} and {}x{} differ",
                            spec_a.values.rows(), spec_a.values.cols(), spec_b.values.rows(),
                            spec_b.values.cols()));
  }
  if (labels_a.size() != labels_b.size()) {
    throw Error(Errc::kShapeMismatch, "selective_mixup: label vectors differ in length");
  }
  MelSpectrogram mixed;
  mixed.params = spec_a.params;
  if (lambda == 1.0) {
    mixed.values = spec_a.values;
  } else if (lambda == 0.0) {
    mixed.values = spec_b.values;
  } else {
    mixed.values = lambda * spec_a.values + (1.0 - lambda) * spec_b.values;
  }
  LabelVector labels(labels_a.size());
  for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = std::max(labels_a[k], labels_b[k]);
  return {std::move(mixed), std::move(labels)};
}

MelSpectrogram spec_augment(const MelSpectrogram& spec, const SpecAugmentPolicy& policy, Rng& rng) {
  if (policy.n_freq_masks < 0 || policy.n_time_masks < 0 || policy.max_freq_width < 0 ||
      policy.max_time_width < 0) {
    throw Error(Errc::kInvalidArgument, "spec_augment: counts and widths must be non-negative");
  }
  MelSpectrogram out = spec;
  const auto rows = static_cast<int>(spec.values.rows());
  const auto cols = static_cast<int>(spec.values.cols());
  const int max_f = std::min(policy.max_freq_width, rows);
  const int max_t = std::min(policy.max_time_width, cols);
  for (int i = 0; i < policy.n_freq_masks; ++i) {
    const auto width = static_cast<int>(uniform_int(rng, 0, max_f));
    const auto start = static_cast<int>(uniform_int(rng, 0, rows - width));
    out.values.middleRows(start, width).setConstant(policy.fill_value);
  }
  for (int i = 0; i < policy.n_time_masks; ++i) {
    const auto width = static_cast<int>(uniform_int(rng, 0, max_t));
    const auto start = static_cast<int>(uniform_int(rng, 0, cols - width));
    out.values.middleCols(start, width).setConstant(policy.fill_value);
  }
  return out;
}

}  // namespace birdsed
