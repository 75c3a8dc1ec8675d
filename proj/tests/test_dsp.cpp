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

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "birdsed/dsp.hpp"
#include "birdsed/error.hpp"
#include "dsp_oracle.hpp"
#include "test_support.hpp"

namespace birdsed {
namespace {

constexpr double kPi = std::numbers::pi;

using testing::windowed_frame_energy;

TEST(SpectrogramParams, DefaultsAndValidation) {
  SpectrogramParams p;
  EXPECT_EQ(p.sample_rate, 32000);
  EXPECT_EQ(p.n_mels, 128);
  EXPECT_EQ(p.hop_size, 512);
  EXPECT_DOUBLE_EQ(p.fmin, 50.0);
  EXPECT_DOUBLE_EQ(p.fmax, 14000.0);
  EXPECT_NO_THROW(p.validate());
  SpectrogramParams bad = p;
  bad.fmax = 20000.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = p;
  bad.hop_size = 4096;
  EXPECT_THROW(bad.validate(), Error);
  bad = p;
  bad.fmin = 15000.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(StftPower, ZeroInputGivesZeroMatrix) {
  SpectrogramParams p;
  AudioClip c;
  c.sample_rate = p.sample_rate;
  c.samples.assign(8000, 0.0f);
  const Matrix s = stft_power(c, p);
  EXPECT_EQ(s.rows(), p.n_bins());
  EXPECT_EQ(s.cols(), 1 + 8000 / 512);
  EXPECT_EQ(s.cwiseAbs().maxCoeff(), 0.0);
}

TEST(StftPower, BinFrequencySinePeaksAtItsBin) {
  SpectrogramParams p;
  for (int k : {10, 64, 300, 700}) {
    const double hz = static_cast<double>(k) * p.sample_rate / p.n_fft;
    const Matrix s = stft_power(testing::tone_clip(hz, p.sample_rate, 32000), p);
    for (Eigen::Index f = 4; f + 4 < s.cols(); ++f) {
      Eigen::Index arg = 0;
      s.col(f).maxCoeff(&arg);
      EXPECT_EQ(arg, k) << "frame " << f;
    }
  }
}

TEST(StftPower, ParsevalOnNoise) {
  SpectrogramParams p;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const AudioClip c = testing::noise_clip(seed, p.sample_rate, 20000);
    const Matrix s = stft_power(c, p);
    double spectral = 0.0;
    for (Eigen::Index b = 0; b < s.rows(); ++b) {
      const double weight = (b == 0 || b == s.rows() - 1) ? 1.0 : 2.0;
      spectral += weight * s.row(b).sum();
    }
    spectral /= p.n_fft;
    const double temporal = windowed_frame_energy(c, p);
    EXPECT_LT(std::abs(spectral - temporal) / temporal, 1e-6) << "seed " << seed;
  }
}

TEST(StftPower, MatchesDirectDft) {
  SpectrogramParams p;
  p.n_fft = 64;
  p.hop_size = 16;
  p.sample_rate = 8000;
  p.fmax = 4000;
  const AudioClip c = testing::noise_clip(5, 8000, 200);
  const Matrix s = stft_power(c, p);
  const int n = static_cast<int>(c.samples.size());
  for (int f : {0, 3, 12}) {
    for (int k : {0, 5, 32}) {
      std::complex<double> acc = 0.0;
      for (int t = 0; t < p.n_fft; ++t) {
        int j = f * p.hop_size + t - p.n_fft / 2;
        if (j < 0) j = -j;
        if (j >= n) j = 2 * (n - 1) - j;
        const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * t / p.n_fft);
        acc += w * static_cast<double>(c.samples[static_cast<std::size_t>(j)]) *
               std::polar(1.0, -2.0 * kPi * k * t / p.n_fft);
      }
      EXPECT_NEAR(s(k, f), std::norm(acc), 1e-9 * std::max(1.0, std::norm(acc)));
    }
  }
}

TEST(StftPower, RateMismatchAndShortInputAreErrors) {
  SpectrogramParams p;
  AudioClip c = testing::tone_clip(100, 16000, 5000);
  EXPECT_THROW(stft_power(c, p), Error);
  AudioClip tiny;
  tiny.sample_rate = p.sample_rate;
  tiny.samples.assign(3, 0.1f);
  try {
    stft_power(tiny, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kTooShort);
  }
}

TEST(MelScale, HtkFormula) {
  EXPECT_NEAR(hz_to_mel(1000.0), 2595.0 * std::log10(1.0 + 1000.0 / 700.0), 1e-12);
  EXPECT_NEAR(hz_to_mel(1000.0), 1000.0, 0.1);
  for (double hz : {0.0, 50.0, 440.0, 14000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
}

TEST(MelFilterbank, TrianglesWithinBandPeakAtOne) {
  SpectrogramParams p;
  const MelFilterbank fb(p);
  const Matrix& w = fb.weights();
  ASSERT_EQ(w.rows(), p.n_mels);
  ASSERT_EQ(w.cols(), p.n_bins());
  const double bin_hz = static_cast<double>(p.sample_rate) / p.n_fft;
  for (int m = 0; m < p.n_mels; ++m) {
    EXPECT_DOUBLE_EQ(w.row(m).maxCoeff(), 1.0);
    EXPECT_DOUBLE_EQ(w(m, fb.center_bin(m)), 1.0);
    EXPECT_GE(w.row(m).minCoeff(), 0.0);
    for (Eigen::Index b = 0; b < w.cols(); ++b) {
      const double hz = static_cast<double>(b) * bin_hz;
      if (hz < p.fmin || hz > p.fmax) {
        EXPECT_EQ(w(m, b), 0.0) << m << "," << b;
      }
    }
  }
}

TEST(MelFilterbank, CentersAreEquallySpacedInMel) {
  SpectrogramParams p;
  const MelFilterbank fb(p);
  const double lo = hz_to_mel(p.fmin);
  const double hi = hz_to_mel(p.fmax);
  const double step = (hi - lo) / (p.n_mels + 1);
  for (int m = 0; m < p.n_mels; ++m) {
    EXPECT_NEAR(hz_to_mel(fb.center_hz()[static_cast<std::size_t>(m)]), lo + (m + 1) * step, 1e-9);
  }
}

TEST(MelFilterbank, RowsOverlapOnlyNeighbours) {
  SpectrogramParams p;
  const Matrix w = mel_filterbank(p);
  for (Eigen::Index a = 0; a < w.rows(); ++a) {
    for (Eigen::Index b = a + 2; b < w.rows(); ++b) {
      EXPECT_EQ(w.row(a).cwiseProduct(w.row(b)).sum(), 0.0) << a << " " << b;
    }
  }
}

TEST(MelFilterbank, TooManyMelsIsAnError) {
  SpectrogramParams p;
  p.n_mels = 1000;
  try {
    mel_filterbank(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kEmptyFilter);
  }
}

TEST(PowerToDb, Examples) {
  Matrix m(1, 3);
  m << 1.0, 100.0, 0.0;
  const Matrix db = power_to_db(m, 1e-10);
  EXPECT_EQ(db(0, 0), 0.0);
  EXPECT_NEAR(db(0, 1), 20.0, 1e-12);
  EXPECT_EQ(db(0, 2), -100.0);
}

TEST(Melspectrogram, FiveSecondChunkShape) {
  SpectrogramParams p;
  const auto s = melspectrogram(testing::tone_clip(1000, p.sample_rate, 160000, 0.5), p);
  EXPECT_EQ(s.n_mels(), 128);
  EXPECT_EQ(s.n_frames(), 313);
  EXPECT_EQ(s.n_frames(), 160000 / 512 + 1);
}

TEST(Melspectrogram, SilenceIsTheFloor) {
  SpectrogramParams p;
  AudioClip c;
  c.sample_rate = p.sample_rate;
  c.samples.assign(16000, 0.0f);
  const auto s = melspectrogram(c, p);
  const double floor = 10.0 * std::log10(p.db_floor_epsilon);
  EXPECT_EQ(s.values.maxCoeff(), floor);
  EXPECT_EQ(s.values.minCoeff(), floor);
}

TEST(Melspectrogram, ToneLandsInNearestCenterFilter) {
  SpectrogramParams p;
  const MelFilterbank fb(p);
  for (double hz : {1000.0, 2500.0, 6000.0}) {
    int nearest = 0;
    for (int m = 1; m < p.n_mels; ++m) {
      if (std::abs(fb.center_hz()[static_cast<std::size_t>(m)] - hz) <
          std::abs(fb.center_hz()[static_cast<std::size_t>(nearest)] - hz)) {
        nearest = m;
      }
    }
    const auto s = melspectrogram(testing::tone_clip(hz, p.sample_rate, 160000), p);
    for (Eigen::Index f = 4; f + 4 < s.values.cols(); ++f) {
      Eigen::Index arg = 0;
      s.values.col(f).maxCoeff(&arg);
      EXPECT_EQ(arg, nearest) << hz << " Hz, frame " << f;
    }
  }
}

TEST(Melspectrogram, GainAddsConstantDecibels) {
  SpectrogramParams p;
  const auto a = melspectrogram(testing::tone_clip(1500, p.sample_rate, 32000, 0.25), p);
  const auto b = melspectrogram(testing::tone_clip(1500, p.sample_rate, 32000, 0.5), p);
  const double floor = 10.0 * std::log10(p.db_floor_epsilon);
  const double shift = 10.0 * std::log10(4.0);
  int checked = 0;
  for (Eigen::Index i = 0; i < a.values.size(); ++i) {
    if (a.values.data()[i] > floor + 30.0) {
      EXPECT_NEAR(b.values.data()[i] - a.values.data()[i], shift, 1e-6);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Melspectrogram, AlwaysFinite) {
  SpectrogramParams p;
  AudioClip c = testing::noise_clip(1, p.sample_rate, 16000);
  for (std::size_t i = 0; i < c.samples.size(); i += 7) c.samples[i] = 0.0f;
  const auto s = melspectrogram(c, p);
  EXPECT_TRUE(s.values.allFinite());
}

TEST(MelExtractor, MatchesFreeFunction) {
  SpectrogramParams p;
  MelExtractor ex(p);
  const AudioClip c = testing::noise_clip(2, p.sample_rate, 24000);
  EXPECT_EQ(ex(c).values, melspectrogram(c, p).values);
}

}  // namespace
}  // namespace birdsed
