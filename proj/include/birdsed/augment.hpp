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

#include <utility>
#include <vector>

#include "birdsed/audio_io.hpp"
#include "birdsed/dsp.hpp"
#include "birdsed/random.hpp"

namespace birdsed {

/// Multi-hot (or smoothed) target vector, one entry per species.
using LabelVector = std::vector<double>;

struct MixupPolicy {
  double beta_alpha = 1.0;
  double apply_probability = 0.5;

  void validate() const;
  /// lambda ~ Beta(beta_alpha, beta_alpha).
  double sample_lambda(Rng& rng) const;
};

struct SpecAugmentPolicy {
  int n_freq_masks = 2;
  int max_freq_width = 16;
  int n_time_masks = 2;
  int max_time_width = 32;
  double fill_value = -100.0;
};

/// Adds `noise` scaled so that rms(clip) / rms(g * noise) = 10^(snr_db / 20).
/// The noise is tiled or cropped from its start to the clip length. The sum
/// is renormalized to unit peak when it would clip. A silent clip uses
/// g = 10^(-snr_db / 20); silent noise is an error.
AudioClip mix_background(const AudioClip& clip, const AudioClip& noise, double snr_db);

/// Gain applied to the noise by mix_background (exposed for tests).
double background_gain(const AudioClip& clip, const AudioClip& noise, double snr_db);

/// lambda * a + (1 - lambda) * b in the dB domain; labels combine by
/// elementwise max. `partner_is_scored` records that b was drawn from a
/// scored-species recording; mixing with anything else is rejected.
std::pair<MelSpectrogram, LabelVector> selective_mixup(const MelSpectrogram& spec_a,
                                                       const LabelVector& labels_a,
                                                       const MelSpectrogram& spec_b,
                                                       const LabelVector& labels_b, double lambda,
                                                       bool partner_is_scored = true);

/// Frequency masks then time masks; each band width is uniform in
/// [0, max_width] and its start uniform over the valid positions.
MelSpectrogram spec_augment(const MelSpectrogram& spec, const SpecAugmentPolicy& policy, Rng& rng);

}  // namespace birdsed
