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

#include "birdsed/dsp.hpp"

#include <cmath>
#include <mutex>

#include <fftw3.h>
#include <fmt/format.h>

#include "birdsed/error.hpp"

namespace birdsed {

namespace {

// FFTW planning is not thread-safe; execution with new-array calls is.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

void SpectrogramParams::validate() const {
  const auto fail = [](const std::string& what) {
    throw Error(Errc::kInvalidArgument, "spectrogram params: " + what);
  };
  if (sample_rate <= 0) fail("sample_rate must be positive");
  if (n_fft < 2 || n_fft % 2 != 0) fail("n_fft must be even and >= 2");
  if (hop_size <= 0 || hop_size > n_fft) fail("hop_size must be in [1, n_fft]");
  if (n_mels < 1) fail("n_mels must be >= 1");
  if (!(fmin >= 0.0 && fmin < fmax)) fail("need 0 <= fmin < fmax");
  if (fmax > sample_rate / 2.0) fail("fmax exceeds Nyquist");
  if (!(power > 0.0)) fail("power must be positive");
  if (!(db_floor_epsilon > 0.0)) fail("db_floor_epsilon must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(const SpectrogramParams& params) {
  params.validate();
  const int n_bins = params.n_bins();
  const double bin_hz = static_cast<double>(params.sample_rate) / params.n_fft;
  const double mel_lo = hz_to_mel(params.fmin);
  const double mel_hi = hz_to_mel(params.fmax);

  std::vector<double> edges(static_cast<std::size_t>(params.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (params.n_mels + 1);
    edges[i] = mel_to_hz(mel);
  }

  weights_ = Matrix::Zero(params.n_mels, n_bins);
  center_hz_.resize(static_cast<std::size_t>(params.n_mels));
  center_bin_.resize(static_cast<std::size_t>(params.n_mels));
  support_.resize(static_cast<std::size_t>(params.n_mels));
  for (int m = 0; m < params.n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    const int apex = static_cast<int>(std::lround(center / bin_hz));
    const double apex_hz = apex * bin_hz;
    if (!(apex_hz > lo && apex_hz < hi) || apex >= n_bins) {
      throw Error(Errc::kEmptyFilter,
                  fmt::format("mel filter {} ({:.1f}-{:.1f} Hz) contains no FFT bin; "
                              "reduce n_mels or increase n_fft",
                              m, lo, hi));
    }
    center_hz_[static_cast<std::size_t>(m)] = center;
    center_bin_[static_cast<std::size_t>(m)] = apex;
    int first = n_bins;
    int last = -1;
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > lo && f <= apex_hz) {
        w = (f - lo) / (apex_hz - lo);
      } else if (f > apex_hz && f < hi) {
        w = (hi - f) / (hi - apex_hz);
      }
      if (w > 0.0) {
        weights_(m, k) = w;
        first = std::min(first, k);
        last = std::max(last, k);
      }
    }
    support_[static_cast<std::size_t>(m)] = {first, last};
  }
}

Matrix MelFilterbank::apply(const Matrix& power) const {
  if (power.rows() != weights_.cols()) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("filterbank expects {} bins, got {}", weights_.cols(), power.rows()));
  }
  Matrix out = Matrix::Zero(weights_.rows(), power.cols());
  for (Eigen::Index m = 0; m < weights_.rows(); ++m) {
    const auto [first, last] = support_[static_cast<std::size_t>(m)];
    for (int k = first; k <= last; ++k) {
      const double w = weights_(m, k);
      if (w != 0.0) out.row(m) += w * power.row(k);
    }
  }
  return out;
}

Matrix mel_filterbank(const SpectrogramParams& params) { return MelFilterbank(params).weights(); }

Matrix power_to_db(const Matrix& power, double epsilon) {
  return power.unaryExpr([epsilon](double p) { return 10.0 * std::log10(std::max(p, epsilon)); });
}

struct MelExtractor::Fft {
  explicit Fft(int n) : size(n) {
    in = static_cast<double*>(fftw_malloc(sizeof(double) * static_cast<std::size_t>(n)));
    out = static_cast<fftw_complex*>(
        fftw_malloc(sizeof(fftw_complex) * static_cast<std::size_t>(n / 2 + 1)));
    std::lock_guard<std::mutex> lock(plan_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  ~Fft() {
    {
      std::lock_guard<std::mutex> lock(plan_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
  }
  int size;
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;
};

namespace {

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

Matrix compute_power(const AudioClip& clip, const SpectrogramParams& params,
                     const std::vector<double>& window, MelExtractor::Fft& fft) {
  if (clip.sample_rate != params.sample_rate) {
    throw Error(Errc::kInvalidArgument,
                fmt::format("stft: clip rate {} != params rate {}", clip.sample_rate,
                            params.sample_rate));
  }
  const auto len = static_cast<long long>(clip.samples.size());
  const int pad = params.n_fft / 2;
  if (len <= pad) {
    throw Error(Errc::kTooShort,
                fmt::format("stft: {} samples cannot be reflect-padded by {}", len, pad));
  }
  const auto reflect = [&](long long i) -> double {
    // i indexes the padded signal.
    long long j = i - pad;
    if (j < 0) j = -j;
    if (j >= len) j = 2 * (len - 1) - j;
    return clip.samples[static_cast<std::size_t>(j)];
  };

  const int n_frames = params.n_frames(clip.samples.size());
  const int n_bins = params.n_bins();
  Matrix out(n_bins, n_frames);
  const bool squared = params.power == 2.0;
  for (int t = 0; t < n_frames; ++t) {
    const long long start = static_cast<long long>(t) * params.hop_size;
    for (int i = 0; i < params.n_fft; ++i) {
      const long long p = start + i;
      const double x = (p >= pad && p < pad + len) ? clip.samples[static_cast<std::size_t>(p - pad)]
                                                   : reflect(p);
      fft.in[i] = x * window[static_cast<std::size_t>(i)];
    }
    fftw_execute_dft_r2c(fft.plan, fft.in, fft.out);
    for (int k = 0; k < n_bins; ++k) {
      const double mag2 = fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
      out(k, t) = squared ? mag2 : std::pow(mag2, params.power / 2.0);
    }
  }
  return out;
}

}  // namespace

MelExtractor::MelExtractor(const SpectrogramParams& params)
    : params_(params), filterbank_(params), fft_(std::make_unique<Fft>(params.n_fft)) {
  window_ = hann_window(params.n_fft);
}

MelExtractor::~MelExtractor() = default;

Matrix MelExtractor::power(const AudioClip& clip) {
  return compute_power(clip, params_, window_, *fft_);
}

MelSpectrogram MelExtractor::operator()(const AudioClip& clip) {
  MelSpectrogram spec;
  spec.params = params_;
  spec.values = power_to_db(filterbank_.apply(power(clip)), params_.db_floor_epsilon);
  return spec;
}

Matrix stft_power(const AudioClip& clip, const SpectrogramParams& params) {
  params.validate();
  MelExtractor::Fft fft(params.n_fft);
  return compute_power(clip, params, hann_window(params.n_fft), fft);
}

MelSpectrogram melspectrogram(const AudioClip& clip, const SpectrogramParams& params) {
  MelExtractor extractor(params);
  return extractor(clip);
}

}  // namespace birdsed
