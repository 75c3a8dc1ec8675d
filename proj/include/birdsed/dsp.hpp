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

#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "birdsed/audio_io.hpp"

namespace birdsed {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SpectrogramParams {
  int sample_rate = 32000;
  int n_fft = 2048;
  int hop_size = 512;
  int n_mels = 128;
  double fmin = 50.0;
  double fmax = 14000.0;
  double power = 2.0;
  double db_floor_epsilon = 1e-10;

  /// Throws kInvalidArgument when the invariants do not hold.
  void validate() const;
  int n_bins() const { return n_fft / 2 + 1; }
  /// Centered framing: 1 + n_samples / hop_size.
  int n_frames(std::size_t n_samples) const {
    return 1 + static_cast<int>(n_samples / static_cast<std::size_t>(hop_size));
  }

  bool operator==(const SpectrogramParams&) const = default;
};

/// n_mels x n_frames matrix of dB values.
struct MelSpectrogram {
  Matrix values;
  SpectrogramParams params;

  int n_mels() const { return static_cast<int>(values.rows()); }
  int n_frames() const { return static_cast<int>(values.cols()); }
};

/// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Hann-windowed (periodic), centered, reflect-padded |DFT|^power.
/// Shape (n_fft/2 + 1) x n_frames.
Matrix stft_power(const AudioClip& clip, const SpectrogramParams& params);

/// Triangular HTK filters, unnormalized. Filter m rises from edge m to its
/// center and falls to edge m + 2, where the n_mels + 2 edges are equally
/// spaced in mel between fmin and fmax. The apex is placed on the FFT bin
/// nearest the center frequency so every row peaks at exactly 1.
class MelFilterbank {
 public:
  explicit MelFilterbank(const SpectrogramParams& params);

  const Matrix& weights() const { return weights_; }
  /// Center frequency (Hz) of each filter on the continuous mel grid.
  const std::vector<double>& center_hz() const { return center_hz_; }
  int center_bin(int mel) const { return center_bin_[static_cast<std::size_t>(mel)]; }
  /// Inclusive nonzero bin range of each row.
  std::pair<int, int> support(int mel) const { return support_[static_cast<std::size_t>(mel)]; }

  /// weights * power, skipping the zero part of each row.
  Matrix apply(const Matrix& power) const;

 private:
  Matrix weights_;
  std::vector<double> center_hz_;
  std::vector<int> center_bin_;
  std::vector<std::pair<int, int>> support_;
};

/// Convenience wrapper returning MelFilterbank(params).weights().
Matrix mel_filterbank(const SpectrogramParams& params);

/// 10 * log10(max(p, epsilon)); no top-dB clamping.
Matrix power_to_db(const Matrix& power, double epsilon);

/// Reusable front end; owns an FFT plan and the filterbank. One instance
/// per thread.
class MelExtractor {
 public:
  explicit MelExtractor(const SpectrogramParams& params);
  ~MelExtractor();
  MelExtractor(const MelExtractor&) = delete;
  MelExtractor& operator=(const MelExtractor&) = delete;

  const SpectrogramParams& params() const { return params_; }
  const MelFilterbank& filterbank() const { return filterbank_; }

  Matrix power(const AudioClip& clip);
  MelSpectrogram operator()(const AudioClip& clip);

  struct Fft;

 private:
  SpectrogramParams params_;
  MelFilterbank filterbank_;
  std::vector<double> window_;
  std::unique_ptr<Fft> fft_;
};

/// power_to_db(filterbank * stft_power).
MelSpectrogram melspectrogram(const AudioClip& clip, const SpectrogramParams& params);

}  // namespace birdsed
