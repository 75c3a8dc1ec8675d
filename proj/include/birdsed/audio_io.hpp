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
#include <vector>

#include "birdsed/random.hpp"

namespace birdsed {

/// Mono waveform. Samples are finite and within [-1, 1] once decoded.
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 0;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Reads a RIFF/WAVE file (PCM16 or IEEE float32, one or two channels).
/// Stereo is averaged to mono. PCM16 is scaled by 1/32768.
/// Throws Error with kFileNotFound, kUnsupportedFormat or kTruncatedFile.
AudioClip load_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono at the clip's rate. Samples are scaled by 32768 and
/// clamped to the int16 range, so decode -> encode -> decode is lossless.
void save_wav(const std::filesystem::path& path, const AudioClip& clip);

/// Band-limited rate conversion: polyphase windowed sinc, Kaiser window,
/// 64 taps per phase. Output length is round(len * target / source).
AudioClip resample(const AudioClip& clip, int target_rate);

/// Random window of exactly `window_s` seconds. Shorter clips are tiled
/// (repeated from the start) until they cover the window, then cropped.
AudioClip crop_window(const AudioClip& clip, double window_s, Rng& rng);

/// Start offset crop_window draws for a clip of `length` samples: uniform
/// over [0, span - window_length] where span is `length` rounded up to a
/// whole number of repetitions covering the window.
std::size_t draw_crop_offset(std::size_t length, std::size_t window_length, Rng& rng);

/// Window of `window_length` samples starting at `offset` in the tiled clip.
AudioClip tile_crop(const AudioClip& clip, std::size_t window_length, std::size_t offset);

/// Same as crop_window but also reports the chosen start offset in samples.
AudioClip crop_window(const AudioClip& clip, double window_s, Rng& rng,
                      std::size_t& offset);

/// Partitions a clip of exactly chunk_s * n_parts seconds into n_parts
/// contiguous chunks.
std::vector<AudioClip> split_chunks(const AudioClip& clip, double chunk_s, int n_parts);

}  // namespace birdsed
