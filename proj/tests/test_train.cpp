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
#include <numbers>

#include <fmt/format.h>

#include "birdsed/audio_io.hpp"
#include "birdsed/error.hpp"
#include "birdsed/train.hpp"
#include "test_support.hpp"

namespace birdsed {
namespace {

namespace fs = std::filesystem;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double plain_bce(const std::vector<double>& p, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += -y[k] * std::log(p[k]) - (1.0 - y[k]) * std::log(1.0 - p[k]);
  return s / static_cast<double>(p.size());
}

TEST(SmoothLabels, Examples) {
  EXPECT_EQ(smooth_labels(std::vector<double>{1, 0, 0}, 0.01), (std::vector<double>{1.0, 0.01, 0.01}));
  EXPECT_EQ(smooth_labels(std::vector<double>{0, 1, 0}, 0.0), (std::vector<double>{0, 1, 0}));
  EXPECT_EQ(smooth_labels(std::vector<double>{1, 1}, 0.3), (std::vector<double>{1, 1}));
  EXPECT_THROW(smooth_labels(std::vector<double>{0.5}, 0.01), Error);
}

TEST(FocalBce, Examples) {
  EXPECT_NEAR(focal_bce(std::vector<double>{0.5}, std::vector<double>{1.0}, 0.0).loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(focal_bce(std::vector<double>{1.0 - 1e-12}, std::vector<double>{1.0}, 2.0).loss, 0.0, 1e-12);
  EXPECT_NEAR(focal_bce(std::vector<double>{0.5}, std::vector<double>{1.0}, 2.0).loss, 0.25 * std::log(2.0),
              1e-12);
  EXPECT_NEAR(focal_bce(std::vector<double>{0.5}, std::vector<double>{1.0}, 2.0).loss, 0.1733, 1e-4);
}

TEST(FocalBce, GammaZeroIsBce) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(7);
    std::vector<double> y(7);
    for (auto& v : p) v = uniform_real(rng, 0.001, 0.999);
    for (auto& v : y) v = trial % 2 ? uniform01(rng) : static_cast<double>(bernoulli(rng, 0.5));
    EXPECT_NEAR(focal_bce(p, y, 0.0).loss, plain_bce(p, y), 1e-12);
  }
}

TEST(FocalBce, NonNegativeAndRejectsOutOfRange) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p{uniform01(rng), uniform01(rng)};
    std::vector<double> y{1.0, 0.0};
    EXPECT_GE(focal_bce(p, y, 2.0).loss, 0.0);
  }
  EXPECT_NEAR(focal_bce(std::vector<double>{0.0, 1.0}, std::vector<double>{0.0, 1.0}, 1.0).loss, 0.0, 1e-12);
  EXPECT_THROW(focal_bce(std::vector<double>{1.2}, std::vector<double>{1.0}, 2.0), Error);
  EXPECT_THROW(focal_bce(std::vector<double>{0.5}, std::vector<double>{-0.1}, 2.0), Error);
  EXPECT_THROW(focal_bce(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0}, 2.0), Error);
}

class FocalLogitGradient : public ::testing::TestWithParam<double> {};

TEST_P(FocalLogitGradient, MatchesCentralDifferences) {
  const double gamma = GetParam();
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(5);
    std::vector<double> y(5);
    for (auto& v : z) v = uniform_real(rng, -4.0, 4.0);
    for (auto& v : y) v = bernoulli(rng, 0.5) ? 1.0 : 0.01;
    const auto loss_of = [&](const std::vector<double>& logits) {
      std::vector<double> p;
      for (double v : logits) p.push_back(sigmoid(v));
      return focal_bce(p, y, gamma);
    };
    const LossValue at = loss_of(z);
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double p = sigmoid(z[k]);
      const double analytic = at.gradient[k] * p * (1.0 - p);
      const double numeric = testing::central_difference(&z[k], [&] { return loss_of(z).loss; });
      EXPECT_LT(testing::relative_error(analytic, numeric), 1e-6) << "gamma " << gamma << " k " << k;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Gammas, FocalLogitGradient, ::testing::Values(0.0, 1.0, 2.0));

TEST(WeightedClipLoss, RatingWeights) {
  LossConfig c;
  EXPECT_DOUBLE_EQ(rating_weight(5.0, c), 1.0);
  EXPECT_DOUBLE_EQ(rating_weight(2.5, c), 0.5);
  EXPECT_DOUBLE_EQ(rating_weight(0.0, c), 0.5);
  c.unrated_default_weight = 0.3;
  EXPECT_DOUBLE_EQ(rating_weight(0.0, c), 0.3);
  c.rating_weighting = false;
  EXPECT_DOUBLE_EQ(rating_weight(1.0, c), 1.0);
  EXPECT_THROW(rating_weight(6.0, LossConfig{}), Error);
}

TEST(WeightedClipLoss, ScalesExactlyWithWeight) {
  const LossConfig c;
  const std::vector<double> p{0.2, 0.7, 0.9};
  const std::vector<double> y{0, 1, 0};
  const double full = weighted_clip_loss(p, y, 5.0, c).loss;
  EXPECT_DOUBLE_EQ(full, focal_bce(p, smooth_labels(y, 0.01), 2.0).loss);
  EXPECT_DOUBLE_EQ(weighted_clip_loss(p, y, 1.0, c).loss, 0.2 * full);
  EXPECT_DOUBLE_EQ(weighted_clip_loss(p, y, 0.0, c).loss, 0.5 * full);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 1e-6), 1e-3);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-6), 1e-6, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 1e-6), (1e-3 + 1e-6) / 2.0, 1e-15);
  EXPECT_THROW(cosine_lr(0, 0, 1e-3, 1e-6), Error);
  EXPECT_THROW(cosine_lr(101, 100, 1e-3, 1e-6), Error);
}

// Every tensor, running statistics included, set to `value`.
Weights<double> filled(const ModelConfig& c, double value) {
  Weights<double> w(c);
  for (auto& t : w.tensors()) std::fill(t.data.begin(), t.data.end(), value);
  return w;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.blocks = {{2, 1}};
  c.n_mels = 8;
  c.n_classes = 2;
  return c;
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  OptimizerConfig oc;
  oc.weight_decay = 0.0;
  auto w = filled(tiny_model(), 0.3);
  OptimizerState<double> state(w, oc, 10);
  adamw_step(w, filled(tiny_model(), 1.0), state, 0.1);
  for (const auto& t : w.tensors()) {
    if (!t.trainable) continue;
    for (double v : t.data) EXPECT_NEAR(v, 0.3 - 0.1, 1e-8);
  }
  EXPECT_EQ(state.step, 1);
}

TEST(AdamW, SignSymmetry) {
  OptimizerConfig oc;
  auto a = filled(tiny_model(), 0.5);
  auto b = filled(tiny_model(), -0.5);
  OptimizerState<double> sa(a, oc, 10);
  OptimizerState<double> sb(b, oc, 10);
  for (int i = 0; i < 5; ++i) {
    adamw_step(a, filled(tiny_model(), 0.2 * (i + 1)), sa, 0.01);
    adamw_step(b, filled(tiny_model(), -0.2 * (i + 1)), sb, 0.01);
  }
  for (std::size_t t = 0; t < a.tensors().size(); ++t) {
    const auto& ta = a.tensors()[t].data;
    const auto& tb = b.tensors()[t].data;
    for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_DOUBLE_EQ(ta[i], -tb[i]);
  }
}

TEST(AdamW, ZeroGradientAndDecoupledDecay) {
  OptimizerConfig oc;
  oc.weight_decay = 0.0;
  auto w = filled(tiny_model(), 0.7);
  OptimizerState<double> s(w, oc, 10);
  adamw_step(w, filled(tiny_model(), 0.0), s, 0.1);
  for (const auto& t : w.tensors()) {
    for (double v : t.data) EXPECT_EQ(v, 0.7);
  }
  oc.weight_decay = 0.05;
  auto d = filled(tiny_model(), 0.7);
  OptimizerState<double> sd(d, oc, 10);
  for (int i = 0; i < 3; ++i) adamw_step(d, filled(tiny_model(), 0.0), sd, 0.1);
  const double expected = 0.7 * std::pow(1.0 - 0.1 * 0.05, 3);
  for (const auto& t : d.tensors()) {
    if (!t.trainable) continue;
    for (double v : t.data) EXPECT_NEAR(v, expected, 1e-12);
  }
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  OptimizerConfig oc;
  auto w = filled(tiny_model(), 0.4);
  OptimizerState<double> s(w, oc, 10);
  auto g = filled(tiny_model(), 1.0);
  g.class_weight()(0, 0) = std::numeric_limits<double>::infinity();
  try {
    adamw_step(w, g, s, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kNonFinite);
  }
  EXPECT_EQ(s.step, 0);
  for (const auto& t : w.tensors()) {
    for (double v : t.data) EXPECT_EQ(v, 0.4);
  }
}

TEST(TrainConfig, KeyValueRoundTrip) {
  TrainConfig c;
  c.epochs = 3;
  c.loss.focal_gamma = 1.5;
  c.optimizer.lr_max = 2e-3;
  c.mixup = false;
  KeyValueConfig kv;
  c.write(kv);
  const auto back = TrainConfig::read(kv);
  EXPECT_EQ(back.epochs, 3);
  EXPECT_EQ(back.loss.focal_gamma, 1.5);
  EXPECT_EQ(back.optimizer.lr_max, 2e-3);
  EXPECT_FALSE(back.mixup);
  LossConfig bad;
  bad.smoothing_value = 0.5;
  EXPECT_THROW(bad.validate(), Error);
}

// Three tone classes, 1.5 s recordings cut into six 0.25 s chunks.
struct ToyData {
  fs::path dir;
  std::vector<Recording> recordings;
  SpeciesTable table{{"low", "mid", "high"}};
  FeatureConfig features;
  TrainConfig config;
};

ToyData make_toy(const std::string& name, int per_class) {
  ToyData d;
  d.dir = testing::scratch_dir(name);
  d.features.spectrogram.n_fft = 512;
  d.features.spectrogram.hop_size = 256;
  d.features.spectrogram.n_mels = 32;
  d.features.window_s = 1.5;
  d.features.chunk_s = 0.25;
  const double tones[] = {400.0, 2000.0, 7000.0};
  Rng rng(99);
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < per_class; ++i) {
      AudioClip clip;
      clip.sample_rate = 32000;
      const double f = tones[k] * uniform_real(rng, 0.95, 1.05);
      for (int n = 0; n < 48000; ++n) {
        const double t = n / 32000.0;
        const double env = std::fmod(t, 0.25) < 0.15 ? 1.0 : 0.0;
        clip.samples.push_back(static_cast<float>(0.3 * env * std::sin(2.0 * std::numbers::pi * f * t) +
                                                  0.01 * uniform_real(rng, -1, 1)));
      }
      Recording r;
      r.audio_path = d.dir / fmt::format("{}_{}.wav", d.table.name(static_cast<std::size_t>(k)), i);
      save_wav(r.audio_path, clip);
      r.labels = {d.table.name(static_cast<std::size_t>(k))};
      r.rating = 4.0;
      d.recordings.push_back(r);
    }
  }
  d.config.model.blocks = {{4, 2}, {8, 2}};
  d.config.model.n_mels = 32;
  d.config.model.n_classes = 3;
  d.config.validation_fraction = 0.0;
  d.config.mixup = false;
  d.config.batch_size = 6;
  return d;
}

TEST(Train, DeterministicForFixedSeed) {
  auto d = make_toy("train_det", 1);
  d.recordings.resize(2);
  d.config.epochs = 1;
  d.config.steps_per_epoch = 2;
  d.config.mixup = true;
  FeatureSource fa(d.features);
  FeatureSource fb(d.features);
  const auto a = train(d.recordings, d.table, d.config, fa, 17);
  const auto b = train(d.recordings, d.table, d.config, fb, 17);
  for (std::size_t t = 0; t < a.weights.tensors().size(); ++t) {
    EXPECT_EQ(a.weights.tensors()[t].data, b.weights.tensors()[t].data) << a.weights.tensors()[t].name;
  }
  ASSERT_EQ(a.steps.size(), 2u);
  EXPECT_EQ(a.steps[1].loss, b.steps[1].loss);
}

TEST(Train, LearningRateLogFollowsCosine) {
  auto d = make_toy("train_lr", 1);
  d.config.epochs = 3;
  d.config.steps_per_epoch = 2;
  FeatureSource f(d.features);
  const auto r = train(d.recordings, d.table, d.config, f, 4);
  ASSERT_EQ(r.steps.size(), 6u);
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    EXPECT_EQ(r.steps[i].lr,
              cosine_lr(static_cast<long long>(i), 6, d.config.optimizer.lr_max, d.config.optimizer.lr_min));
    EXPECT_EQ(r.steps[i].step, static_cast<long long>(i) + 1);
  }
  EXPECT_EQ(r.epochs.back().step, 6);
}

TEST(Train, SeparableDataLossDropsBelowAQuarter) {
  auto d = make_toy("train_separable", 4);
  d.config.epochs = 20;
  d.config.steps_per_epoch = 10;
  d.config.optimizer.lr_max = 3e-3;
  FeatureSource f(d.features);
  const auto r = train(d.recordings, d.table, d.config, f, 8);
  ASSERT_EQ(r.steps.size(), 200u);
  const double initial = r.epochs.front().loss;
  const double final_loss = r.epochs.back().loss;
  RecordProperty("initial_loss", std::to_string(initial));
  RecordProperty("final_loss", std::to_string(final_loss));
  EXPECT_LT(final_loss, 0.25 * initial) << "initial " << initial << " final " << final_loss;
}

TEST(Train, ValidationSplitHoldsOutPerSpecies) {
  auto d = make_toy("train_split", 10);
  Rng rng(1);
  std::vector<std::size_t> tr;
  std::vector<std::size_t> va;
  split_train_validation(d.recordings, 0.2, rng, tr, va);
  EXPECT_EQ(va.size(), 6u);
  EXPECT_EQ(tr.size() + va.size(), d.recordings.size());
}

}  // namespace
}  // namespace birdsed
