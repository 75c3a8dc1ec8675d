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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <vector>

#include "birdsed/audio_io.hpp"
#include "birdsed/error.hpp"
#include "test_support.hpp"

namespace birdsed {
namespace {

namespace fs = std::filesystem;

// Independent RIFF writer so decoding is not checked against our own encoder.
void put32(std::vector<char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put16(std::vector<char>& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}

void write_raw_wav(const fs::path& path, std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                   std::uint16_t bits, const std::vector<char>& payload) {
  std::vector<char> b;
  const auto block = static_cast<std::uint16_t>(channels * bits / 8);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put32(b, static_cast<std::uint32_t>(36 + payload.size()));
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(b, 16);
  put16(b, format);
  put16(b, channels);
  put32(b, rate);
  put32(b, rate * block);
  put16(b, block);
  put16(b, bits);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put32(b, static_cast<std::uint32_t>(payload.size()));
  b.insert(b.end(), payload.begin(), payload.end());
  std::ofstream(path, std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
}

std::vector<char> pcm16(const std::vector<std::int16_t>& v) {
  std::vector<char> out;
  for (auto s : v) put16(out, static_cast<std::uint16_t>(s));
  return out;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::kIo;
}

TEST(LoadWav, OneSecondPcm16) {
  const auto dir = testing::scratch_dir("wav_1s");
  std::vector<std::int16_t> s(32000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<std::int16_t>(i % 200 - 100);
  write_raw_wav(dir / "a.wav", 1, 1, 32000, 16, pcm16(s));
  const auto clip = load_wav(dir / "a.wav");
  EXPECT_EQ(clip.sample_rate, 32000);
  ASSERT_EQ(clip.samples.size(), 32000u);
  EXPECT_DOUBLE_EQ(clip.duration_seconds(), 1.0);
  EXPECT_FLOAT_EQ(clip.samples[5], -95.0f / 32768.0f);
}

TEST(LoadWav, StereoWithIdenticalChannelsEqualsEitherChannel) {
  const auto dir = testing::scratch_dir("wav_stereo");
  std::vector<std::int16_t> inter;
  std::vector<std::int16_t> mono;
  for (int i = 0; i < 500; ++i) {
    const auto v = static_cast<std::int16_t>(std::lround(12000 * std::sin(0.05 * i)));
    inter.push_back(v);
    inter.push_back(v);
    mono.push_back(v);
  }
  write_raw_wav(dir / "s.wav", 1, 2, 16000, 16, pcm16(inter));
  const auto clip = load_wav(dir / "s.wav");
  ASSERT_EQ(clip.samples.size(), mono.size());
  for (std::size_t i = 0; i < mono.size(); ++i) EXPECT_EQ(clip.samples[i], static_cast<float>(mono[i] / 32768.0));
}

TEST(LoadWav, StereoIsChannelMean) {
  const auto dir = testing::scratch_dir("wav_mean");
  write_raw_wav(dir / "m.wav", 1, 2, 8000, 16, pcm16({1000, 3000, -200, 600}));
  const auto clip = load_wav(dir / "m.wav");
  ASSERT_EQ(clip.samples.size(), 2u);
  EXPECT_FLOAT_EQ(clip.samples[0], 2000.0f / 32768.0f);
  EXPECT_FLOAT_EQ(clip.samples[1], 200.0f / 32768.0f);
}

TEST(LoadWav, FullScaleSquareWave) {
  const auto dir = testing::scratch_dir("wav_square");
  std::vector<std::int16_t> s;
  for (int i = 0; i < 64; ++i) s.push_back((i / 8) % 2 ? -32767 : 32767);
  write_raw_wav(dir / "q.wav", 1, 1, 32000, 16, pcm16(s));
  const auto clip = load_wav(dir / "q.wav");
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_NEAR(std::abs(clip.samples[i]), 32767.0 / 32768.0, 1e-7);
    EXPECT_NEAR(std::abs(clip.samples[i]), 0.99997, 1e-5);
  }
}

TEST(LoadWav, Float32) {
  const auto dir = testing::scratch_dir("wav_f32");
  const std::vector<float> v{0.25f, -0.5f, 0.125f};
  std::vector<char> payload(v.size() * 4);
  std::memcpy(payload.data(), v.data(), payload.size());
  write_raw_wav(dir / "f.wav", 3, 1, 44100, 32, payload);
  const auto clip = load_wav(dir / "f.wav");
  EXPECT_EQ(clip.sample_rate, 44100);
  EXPECT_EQ(clip.samples, v);
}

TEST(LoadWav, ErrorsAreDistinct) {
  const auto dir = testing::scratch_dir("wav_errors");
  EXPECT_EQ(code_of([&] { load_wav(dir / "missing.wav"); }), Errc::kFileNotFound);

  write_raw_wav(dir / "pcm8.wav", 1, 1, 8000, 8, std::vector<char>(10, 0));
  EXPECT_EQ(code_of([&] { load_wav(dir / "pcm8.wav"); }), Errc::kUnsupportedFormat);
  write_raw_wav(dir / "quad.wav", 1, 4, 8000, 16, std::vector<char>(16, 0));
  EXPECT_EQ(code_of([&] { load_wav(dir / "quad.wav"); }), Errc::kUnsupportedFormat);

  write_raw_wav(dir / "full.wav", 1, 1, 8000, 16, pcm16(std::vector<std::int16_t>(100, 7)));
  const auto size = fs::file_size(dir / "full.wav");
  fs::copy_file(dir / "full.wav", dir / "cut.wav");
  fs::resize_file(dir / "cut.wav", size - 50);
  EXPECT_EQ(code_of([&] { load_wav(dir / "cut.wav"); }), Errc::kTruncatedFile);
  fs::copy_file(dir / "full.wav", dir / "header.wav");
  fs::resize_file(dir / "header.wav", 20);
  EXPECT_EQ(code_of([&] { load_wav(dir / "header.wav"); }), Errc::kTruncatedFile);
}

TEST(SaveWav, RoundTripWithinQuantization) {
  const auto dir = testing::scratch_dir("wav_roundtrip");
  Rng rng(3);
  AudioClip clip;
  clip.sample_rate = 32000;
  for (int i = 0; i < 4000; ++i) clip.samples.push_back(static_cast<float>(uniform_real(rng, -1.0, 1.0)));
  save_wav(dir / "r.wav", clip);
  const auto back = load_wav(dir / "r.wav");
  ASSERT_EQ(back.samples.size(), clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    EXPECT_LE(std::abs(back.samples[i] - clip.samples[i]), 1.0 / 32768.0);
  }
  // A decoded clip re-encodes to the same bytes.
  save_wav(dir / "r2.wav", back);
  EXPECT_EQ(load_wav(dir / "r2.wav").samples, back.samples);
}

AudioClip tone(double hz, int rate, std::size_t n, double amp = 0.5) {
  AudioClip c;
  c.sample_rate = rate;
  for (std::size_t i = 0; i < n; ++i) {
    c.samples.push_back(static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate)));
  }
  return c;
}

double rms_diff(const std::vector<float>& a, const std::vector<float>& b, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += (a[i] - b[i]) * static_cast<double>(a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(to - from));
}

TEST(Resample, SameRateIsIdentity) {
  const auto c = tone(440, 32000, 1000);
  const auto r = resample(c, 32000);
  EXPECT_EQ(r.samples, c.samples);
  EXPECT_EQ(r.sample_rate, 32000);
}

TEST(Resample, LengthFollowsRateRatio) {
  const auto c = tone(440, 16000, 16000);
  const auto r = resample(c, 32000);
  EXPECT_EQ(r.sample_rate, 32000);
  EXPECT_EQ(r.samples.size(), 32000u);
  EXPECT_EQ(resample(tone(440, 44100, 1001), 32000).samples.size(),
            static_cast<std::size_t>(std::llround(1001.0 * 32000 / 44100)));
}

TEST(Resample, PreservesDcAwayFromEdges) {
  AudioClip c;
  c.sample_rate = 22050;
  c.samples.assign(22050, 0.5f);
  const auto r = resample(c, 32000);
  for (std::size_t i = 200; i + 200 < r.samples.size(); ++i) EXPECT_NEAR(r.samples[i], 0.5, 1e-3);
}

TEST(Resample, UpThenDownRecoversBandLimitedSignal) {
  const int rate = 16000;
  const auto c = tone(1234.5, rate, 8000);  // below rate / 4
  const auto back = resample(resample(c, 2 * rate), rate);
  ASSERT_EQ(back.samples.size(), c.samples.size());
  EXPECT_LT(rms_diff(back.samples, c.samples, 200, c.samples.size() - 200), 1e-3);
}

TEST(Resample, RejectsNonPositiveRate) {
  const auto c = tone(100, 8000, 100);
  EXPECT_EQ(code_of([&] { resample(c, 0); }), Errc::kInvalidArgument);
  EXPECT_EQ(code_of([&] { resample(c, -5); }), Errc::kInvalidArgument);
}

AudioClip ramp(std::size_t n, int rate) {
  AudioClip c;
  c.sample_rate = rate;
  for (std::size_t i = 0; i < n; ++i) c.samples.push_back(static_cast<float>(i) / static_cast<float>(n));
  return c;
}

TEST(CropWindow, SeededAndExactLength) {
  const auto c = ramp(60 * 100, 100);
  Rng a(9);
  Rng b(9);
  const auto x = crop_window(c, 30.0, a);
  const auto y = crop_window(c, 30.0, b);
  EXPECT_EQ(x.samples.size(), 3000u);
  EXPECT_EQ(x.samples, y.samples);
}

TEST(CropWindow, ExactLengthClipIsReturnedWhole) {
  const auto c = ramp(3000, 100);
  Rng rng(1);
  std::size_t offset = 99;
  const auto x = crop_window(c, 30.0, rng, offset);
  EXPECT_EQ(offset, 0u);
  EXPECT_EQ(x.samples, c.samples);
}

TEST(CropWindow, ShortClipIsTiled) {
  const auto c = ramp(1200, 100);  // 12 s
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::size_t offset = 0;
    const auto x = crop_window(c, 30.0, rng, offset);
    ASSERT_EQ(x.samples.size(), 3000u);
    for (std::size_t i = 0; i < x.samples.size(); ++i) {
      EXPECT_EQ(x.samples[i], c.samples[(offset + i) % 1200]);
    }
    for (std::size_t i = 0; i + 1200 < x.samples.size(); ++i) EXPECT_EQ(x.samples[i], x.samples[i + 1200]);
  }
}

TEST(CropWindow, EmptyClipIsAnError) {
  AudioClip c;
  c.sample_rate = 100;
  Rng rng(1);
  EXPECT_EQ(code_of([&] { crop_window(c, 30.0, rng); }), Errc::kEmptyInput);
}

TEST(SplitChunks, SixFiveSecondParts) {
  Rng rng(4);
  AudioClip c;
  c.sample_rate = 32000;
  for (int i = 0; i < 30 * 32000; ++i) c.samples.push_back(static_cast<float>(uniform_real(rng, -1, 1)));
  const auto parts = split_chunks(c, 5.0, 6);
  ASSERT_EQ(parts.size(), 6u);
  std::vector<float> joined;
  for (const auto& p : parts) {
    EXPECT_EQ(p.samples.size(), 160000u);
    EXPECT_EQ(p.sample_rate, 32000);
    joined.insert(joined.end(), p.samples.begin(), p.samples.end());
  }
  EXPECT_EQ(joined, c.samples);
}

TEST(SplitChunks, SinglePartIsIdentity) {
  const auto c = ramp(500, 100);
  const auto parts = split_chunks(c, 5.0, 1);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].samples, c.samples);
}

TEST(SplitChunks, LengthMismatchIsAnError) {
  const auto c = ramp(501, 100);
  EXPECT_EQ(code_of([&] { split_chunks(c, 5.0, 1); }), Errc::kLengthMismatch);
}

}  // namespace
}  // namespace birdsed
