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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "birdsed/augment.hpp"
#include "birdsed/config.hpp"
#include "birdsed/dataset.hpp"
#include "birdsed/model.hpp"

namespace birdsed {

struct LossConfig {
  double focal_gamma = 2.0;
  double smoothing_value = 0.01;
  bool rating_weighting = true;
  double unrated_default_weight = 0.5;

  void validate() const;
};

/// Positives stay 1; zeros become `value`. Targets must be 0 or 1.
std::vector<double> smooth_labels(std::span<const double> targets, double value);

struct LossValue {
  double loss = 0.0;
  /// d loss / d probability, per class.
  std::vector<double> gradient;
};

/// Mean over classes of (1 - p_t)^gamma * BCE(p, y), p_t = y p + (1 - y)(1 - p).
/// Probabilities must lie in [0, 1]; the endpoints are pulled 1e-12 inside.
LossValue focal_bce(std::span<const double> probabilities, std::span<const double> targets, double gamma);

/// rating / 5, or the unrated default for rating 0; 1 when weighting is off.
double rating_weight(double rating, const LossConfig& config);

/// focal_bce(p, smooth_labels(y)) scaled by rating_weight.
LossValue weighted_clip_loss(std::span<const double> probabilities, std::span<const double> targets,
                             double rating, const LossConfig& config);

/// lr_min + (lr_max - lr_min) (1 + cos(pi t / T)) / 2.
double cosine_lr(long long step, long long total, double lr_max, double lr_min);

struct OptimizerConfig {
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-2;

  void validate() const;
};

template <typename Scalar>
struct OptimizerState {
  OptimizerConfig config;
  long long total_steps = 0;
  long long step = 0;
  Weights<Scalar> m;
  Weights<Scalar> v;

  OptimizerState() = default;
  OptimizerState(const Weights<Scalar>& like, OptimizerConfig cfg, long long total);
};

/// Decoupled AdamW on every trainable tensor. Non-finite gradients raise
/// kNonFinite and leave weights and state untouched.
template <typename Scalar>
void adamw_step(Weights<Scalar>& weights, const Weights<Scalar>& gradients, OptimizerState<Scalar>& state,
                double lr);

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  int batch_size = 24;
  int epochs = 10;
  /// 0 means ceil(train recordings / batch size).
  int steps_per_epoch = 0;
  bool mixup = true;
  MixupPolicy mixup_policy;
  BatchAugmentation augmentation;
  double validation_fraction = 0.1;

  void validate() const;
  void write(KeyValueConfig& out) const;
  /// Reads every train.* / loss.* / optim.* / mixup.* / specaug.* / model.* key.
  static TrainConfig read(const KeyValueConfig& in);
  static std::vector<std::string> known_keys();
};

struct StepRecord {
  int epoch = 0;
  long long step = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean per-clip weighted loss of the batch
};

struct EpochStats {
  int epoch = 0;
  long long step = 0;     // global step count at epoch end
  double lr = 0.0;        // rate used by the epoch's last step
  double loss = 0.0;      // mean of the epoch's step losses
  double val_micro_f1 = 0.0;
};

struct TrainResult {
  Weights<float> weights;
  std::vector<StepRecord> steps;
  std::vector<EpochStats> epochs;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
};

/// Holds out about `fraction` of each species' recordings (by primary
/// label, rounded down) for validation.
void split_train_validation(const std::vector<Recording>& recordings, double fraction, Rng& rng,
                            std::vector<std::size_t>& train, std::vector<std::size_t>& validation);

/// Converts a chunk stack to model input.
ClipInput<float> to_clip_input(const ChunkStack& chunks);

/// sample_batch -> forward -> summed weighted clip loss -> backward ->
/// adamw_step with cosine_lr; deterministic for a given seed.
TrainResult train(const std::vector<Recording>& recordings, const SpeciesTable& table, const TrainConfig& config,
                  FeatureSource& features, std::uint64_t seed,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

/// `epoch,step,lr,loss,val_micro_f1`.
void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochStats>& epochs);
/// `epoch,step,lr,loss`.
void write_step_log(const std::filesystem::path& path, const std::vector<StepRecord>& steps);

}  // namespace birdsed
