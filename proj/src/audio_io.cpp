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

#include "birdsed/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "birdsed/error.hpp"

namespace birdsed {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

struct WavFormat {
  std::uint16_t tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  const double half = x / 2.0;
  for (int k = 1; k < 64; ++k) {
    term *= (half / k) * (half / k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

constexpr int kTapsPerPhase = 64;
constexpr double kKaiserBeta = 8.0;
constexpr double kRolloff = 0.95;

}  // namespace

AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::kFileNotFound, fmt::format("cannot open '{}'", path.string()));
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const auto fail_truncated = [&](std::string_view what) {
    throw Error(Errc::kTruncatedFile, fmt::format("'{}': {}", path.string(), what));
  };
  if (bytes.size() < 12) fail_truncated("shorter than a RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(Errc::kUnsupportedFormat,
                fmt::format("'{}': not a RIFF/WAVE container", path.string()));
  }

  WavFormat format;
  bool have_format = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* header = bytes.data() + pos;
    const std::uint32_t size = read_u32(header + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(header, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) fail_truncated("incomplete fmt chunk");
      const unsigned char* f = bytes.data() + body;
      format.tag = read_u16(f);
      format.channels = read_u16(f + 2);
      format.sample_rate = read_u32(f + 4);
      format.bits = read_u16(f + 14);
      if (format.tag == kFormatExtensible) {
        if (size < 26) fail_truncated("incomplete extensible fmt chunk");
        format.tag = read_u16(f + 24);
      }
      have_format = true;
    } else if (std::memcmp(header, "data", 4) == 0) {
      if (!have_format) {
        throw Error(Errc::kUnsupportedFormat,
                    fmt::format("'{}': data chunk before fmt chunk", path.string()));
      }
      if (body + size > bytes.size()) fail_truncated("data chunk extends past end of file");
      data = bytes.data() + body;
      data_size = size;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_format) fail_truncated("missing fmt chunk");
  if (data == nullptr) fail_truncated("missing data chunk");

  const bool pcm16 = format.tag == kFormatPcm && format.bits == 16;
  const bool float32 = format.tag == kFormatFloat && format.bits == 32;
  if (!pcm16 && !float32) {
    throw Error(Errc::kUnsupportedFormat,
                fmt::format("'{}': encoding tag {} with {} bits is not PCM16 or float32",
                            path.string(), format.tag, format.bits));
  }
  if (format.channels < 1 || format.channels > 2) {
    throw Error(Errc::kUnsupportedFormat,
                fmt::format("'{}': {} channels (1 or 2 supported)", path.string(),
                            format.channels));
  }
  if (format.sample_rate == 0) {
    throw Error(Errc::kUnsupportedFormat, fmt::format("'{}': zero sample rate", path.string()));
  }

  const std::size_t bytes_per_sample = format.bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * format.channels;
  if (data_size % frame_bytes != 0) fail_truncated("partial sample frame in data chunk");
  const std::size_t n_frames = data_size / frame_bytes;

  AudioClip clip;
  clip.sample_rate = static_cast<int>(format.sample_rate);
  clip.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < format.channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * bytes_per_sample;
      double value = 0.0;
      if (pcm16) {
        value = static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        const std::uint32_t raw = read_u32(p);
        float f = 0.0f;
        std::memcpy(&f, &raw, sizeof f);
        if (!std::isfinite(f)) {
          throw Error(Errc::kUnsupportedFormat,
                      fmt::format("'{}': non-finite float sample at frame {}", path.string(), i));
        }
        value = std::clamp(static_cast<double>(f), -1.0, 1.0);
      }
      acc += value;
    }
    clip.samples[i] = static_cast<float>(acc / format.channels);
  }
  return clip;
}

void save_wav(const std::filesystem::path& path, const AudioClip& clip) {
  if (clip.sample_rate <= 0) {
    throw Error(Errc::kInvalidArgument, "save_wav: sample rate must be positive");
  }
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (float s : clip.samples) {
    const long scaled = std::lround(static_cast<double>(s) * 32768.0);
    const auto q = static_cast<std::int16_t>(std::clamp(scaled, -32768L, 32767L));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(Errc::kIo, fmt::format("cannot write '{}'", path.string()));
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(Errc::kIo, fmt::format("write failed for '{}'", path.string()));
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0 || clip.sample_rate <= 0) {
    throw Error(Errc::kInvalidArgument,
                fmt::format("resample: rates must be positive (source {}, target {})",
                            clip.sample_rate, target_rate));
  }
  if (target_rate == clip.sample_rate) return clip;

  // Output sample n sits at source position n * down / up.
  const long long g = std::gcd(static_cast<long long>(clip.sample_rate),
                               static_cast<long long>(target_rate));
  const long long up = target_rate / g;
  const long long down = clip.sample_rate / g;
  const double cutoff = std::min(1.0, static_cast<double>(up) / down) * kRolloff;
  const int half = kTapsPerPhase / 2;

  // One normalized 64-tap filter per fractional phase p / up.
  std::vector<double> table(static_cast<std::size_t>(up) * kTapsPerPhase);
  const double i0_beta = bessel_i0(kKaiserBeta);
  for (long long p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / up;
    double* taps = table.data() + p * kTapsPerPhase;
    double sum = 0.0;
    for (int j = 0; j < kTapsPerPhase; ++j) {
      const double t = (j - half + 1) - frac;
      const double r = t / half;
      const double window =
          std::abs(r) >= 1.0 ? 0.0 : bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
      const double x = M_PI * cutoff * t;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(x) / x;
      taps[j] = cutoff * sinc * window;
      sum += taps[j];
    }
    for (int j = 0; j < kTapsPerPhase; ++j) taps[j] /= sum;
  }

  const auto in_len = static_cast<long long>(clip.samples.size());
  const auto out_len = static_cast<long long>(
      std::llround(static_cast<double>(in_len) * target_rate / clip.sample_rate));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(out_len));
  for (long long n = 0; n < out_len; ++n) {
    const long long num = n * down;
    const long long base = num / up;
    const long long phase = num % up;
    const double* taps = table.data() + phase * kTapsPerPhase;
    double acc = 0.0;
    for (int j = 0; j < kTapsPerPhase; ++j) {
      const long long idx = base + j - half + 1;
      if (idx < 0 || idx >= in_len) continue;
      acc += taps[j] * clip.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

std::size_t draw_crop_offset(std::size_t length, std::size_t window_length, Rng& rng) {
  if (length == 0) throw Error(Errc::kEmptyInput, "crop_window: empty clip");
  const std::size_t reps = (window_length + length - 1) / length;
  const std::size_t span = reps * length;
  return static_cast<std::size_t>(uniform_index(rng, span - window_length + 1));
}

AudioClip tile_crop(const AudioClip& clip, std::size_t window_length, std::size_t offset) {
  if (clip.samples.empty()) throw Error(Errc::kEmptyInput, "crop_window: empty clip");
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.resize(window_length);
  const std::size_t len = clip.samples.size();
  for (std::size_t i = 0; i < window_length; ++i) out.samples[i] = clip.samples[(offset + i) % len];
  return out;
}

AudioClip crop_window(const AudioClip& clip, double window_s, Rng& rng, std::size_t& offset) {
  if (!(window_s > 0.0)) {
    throw Error(Errc::kInvalidArgument, "crop_window: window must be positive");
  }
  if (clip.samples.empty()) throw Error(Errc::kEmptyInput, "crop_window: empty clip");
  const auto window_len = static_cast<std::size_t>(std::llround(window_s * clip.sample_rate));
  offset = draw_crop_offset(clip.samples.size(), window_len, rng);
  return tile_crop(clip, window_len, offset);
}

AudioClip crop_window(const AudioClip& clip, double window_s, Rng& rng) {
  std::size_t offset = 0;
  return crop_window(clip, window_s, rng, offset);
}

std::vector<AudioClip> split_chunks(const AudioClip& clip, double chunk_s, int n_parts) {
  if (!(chunk_s > 0.0) || n_parts < 1) {
    throw Error(Errc::kInvalidArgument, "split_chunks: chunk length and count must be positive");
  }
  const auto chunk_len = static_cast<std::size_t>(std::llround(chunk_s * clip.sample_rate));
  const std::size_t expected = chunk_len * static_cast<std::size_t>(n_parts);
  if (clip.samples.size() != expected) {
    throw Error(Errc::kLengthMismatch,
                fmt::format("split_chunks: {} samples, expected {} ({} x {} s at {} Hz)",
                            clip.samples.size(), expected, n_parts, chunk_s, clip.sample_rate));
  }
  std::vector<AudioClip> chunks(static_cast<std::size_t>(n_parts));
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    chunks[i].sample_rate = clip.sample_rate;
    const auto begin = clip.samples.begin() + static_cast<std::ptrdiff_t>(i * chunk_len);
    chunks[i].samples.assign(begin, begin + static_cast<std::ptrdiff_t>(chunk_len));
  }
  return chunks;
}

}  // namespace birdsed
