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

#include "birdsed/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <fmt/format.h>

#include "birdsed/csv.hpp"
#include "birdsed/error.hpp"
#include "birdsed/metrics.hpp"

namespace birdsed {

void LossConfig::validate() const {
  if (!(focal_gamma >= 0.0)) throw Error(Errc::kInvalidArgument, "loss: focal_gamma must be >= 0");
  if (!(smoothing_value >= 0.0 && smoothing_value < 0.5)) {
    throw Error(Errc::kInvalidArgument, "loss: smoothing_value must be in [0, 0.5)");
  }
  if (!(unrated_default_weight > 0.0 && unrated_default_weight <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "loss: unrated_default_weight must be in (0, 1]");
  }
}

std::vector<double> smooth_labels(std::span<const double> targets, double value) {
  if (!(value >= 0.0 && value < 1.0)) {
    throw Error(Errc::kInvalidArgument, fmt::format("smooth_labels: value {} outside [0, 1)", value));
  }
  std::vector<double> out(targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (targets[k] == 1.0) {
      out[k] = 1.0;
    } else if (targets[k] == 0.0) {
      out[k] = value;
    } else {
      throw Error(Errc::kInvalidArgument, fmt::format("smooth_labels: target {} is not binary", targets[k]));
    }
  }
  return out;
}

LossValue focal_bce(std::span<const double> probabilities, std::span<const double> targets, double gamma) {
  if (probabilities.size() != targets.size()) {
    throw Error(Errc::kLengthMismatch, "focal_bce: probabilities and targets differ in length");
  }
  if (probabilities.empty()) throw Error(Errc::kEmptyInput, "focal_bce: no classes");
  if (!(gamma >= 0.0)) throw Error(Errc::kInvalidArgument, "focal_bce: gamma must be >= 0");
  constexpr double kEdge = 1e-12;
  const double inv_k = 1.0 / static_cast<double>(probabilities.size());
  LossValue out;
  out.gradient.resize(probabilities.size());
  for (std::size_t k = 0; k < probabilities.size(); ++k) {
    const double raw = probabilities[k];
    const double y = targets[k];
    if (!(raw >= 0.0 && raw <= 1.0)) {
      throw Error(Errc::kInvalidArgument, fmt::format("focal_bce: probability {} outside [0, 1]", raw));
    }
    if (!(y >= 0.0 && y <= 1.0)) {
      throw Error(Errc::kInvalidArgument, fmt::format("focal_bce: target {} outside [0, 1]", y));
    }
    const double p = std::clamp(raw, kEdge, 1.0 - kEdge);
    const double bce = -y * std::log(p) - (1.0 - y) * std::log1p(-p);
    const double d_bce = -y / p + (1.0 - y) / (1.0 - p);
    const double one_minus_pt = 1.0 - (y * p + (1.0 - y) * (1.0 - p));
    const double mod = gamma == 0.0 ? 1.0 : std::pow(one_minus_pt, gamma);
    double d_mod = 0.0;
    if (gamma != 0.0 && bce != 0.0) {
      // d(1 - p_t)/dp = 1 - 2y.
      d_mod = gamma * std::pow(one_minus_pt, gamma - 1.0) * (1.0 - 2.0 * y);
    }
    out.loss += mod * bce * inv_k;
    out.gradient[k] = (d_mod * bce + mod * d_bce) * inv_k;
  }
  return out;
}

double rating_weight(double rating, const LossConfig& config) {
  if (!(rating >= 0.0 && rating <= 5.0)) {
    throw Error(Errc::kInvalidArgument, fmt::format("rating {} outside [0, 5]", rating));
  }
  if (!config.rating_weighting) return 1.0;
  if (rating == 0.0) return config.unrated_default_weight;
  return rating / 5.0;
}

LossValue weighted_clip_loss(std::span<const double> probabilities, std::span<const double> targets,
                             double rating, const LossConfig& config) {
  config.validate();
  const double w = rating_weight(rating, config);
  const std::vector<double> smoothed = smooth_labels(targets, config.smoothing_value);
  LossValue out = focal_bce(probabilities, smoothed, config.focal_gamma);
  out.loss *= w;
  for (double& g : out.gradient) g *= w;
  return out;
}

double cosine_lr(long long step, long long total, double lr_max, double lr_min) {
  if (total <= 0) throw Error(Errc::kInvalidArgument, "cosine_lr: total steps must be positive");
  if (step < 0 || step > total) {
    throw Error(Errc::kInvalidArgument, fmt::format("cosine_lr: step {} outside [0, {}]", step, total));
  }
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

void OptimizerConfig::validate() const {
  const auto fail = [](const std::string& what) { throw Error(Errc::kInvalidArgument, "optimizer: " + what); };
  if (!(lr_max > 0.0)) fail("lr_max must be > 0");
  if (!(lr_min >= 0.0 && lr_min <= lr_max)) fail("lr_min must be in [0, lr_max]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
}

template <typename Scalar>
OptimizerState<Scalar>::OptimizerState(const Weights<Scalar>& like, OptimizerConfig cfg, long long total)
    : config(cfg), total_steps(total), m(like.config()), v(like.config()) {
  config.validate();
  m.set_zero();
  v.set_zero();
}

template <typename Scalar>
void adamw_step(Weights<Scalar>& weights, const Weights<Scalar>& gradients, OptimizerState<Scalar>& state,
                double lr) {
  auto& w = weights.tensors();
  const auto& g = gradients.tensors();
  if (g.size() != w.size() || state.m.tensors().size() != w.size()) {
    throw Error(Errc::kShapeMismatch, "adamw_step: tensor lists differ");
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (g[i].data.size() != w[i].data.size()) {
      throw Error(Errc::kShapeMismatch, fmt::format("adamw_step: '{}' gradient has the wrong size", w[i].name));
    }
    if (!w[i].trainable) continue;
    for (Scalar x : g[i].data) {
      if (!std::isfinite(x)) {
        throw Error(Errc::kNonFinite,
                    fmt::format("adamw_step: non-finite gradient in '{}' at step {}", w[i].name, state.step + 1));
      }
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!w[i].trainable) continue;
    auto& m = state.m.tensors()[i].data;
    auto& v = state.v.tensors()[i].data;
    auto& p = w[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double grad = static_cast<double>(g[i].data[j]);
      const double mj = c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * grad;
      const double vj = c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * grad * grad;
      m[j] = static_cast<Scalar>(mj);
      v[j] = static_cast<Scalar>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      const double w_old = static_cast<double>(p[j]);
      p[j] = static_cast<Scalar>(w_old - lr * (m_hat / (std::sqrt(v_hat) + c.epsilon) + c.weight_decay * w_old));
    }
  }
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step<float>(Weights<float>&, const Weights<float>&, OptimizerState<float>&, double);
template void adamw_step<double>(Weights<double>&, const Weights<double>&, OptimizerState<double>&, double);

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  optimizer.validate();
  mixup_policy.validate();
  if (batch_size < 1) throw Error(Errc::kInvalidArgument, "train: batch_size must be >= 1");
  if (epochs < 1) throw Error(Errc::kInvalidArgument, "train: epochs must be >= 1");
  if (steps_per_epoch < 0) throw Error(Errc::kInvalidArgument, "train: steps_per_epoch must be >= 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw Error(Errc::kInvalidArgument, "train: validation_fraction must be in [0, 1)");
  }
  if (!(augmentation.spec_augment_probability >= 0.0 && augmentation.spec_augment_probability <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "train: specaug.probability must be in [0, 1]");
  }
}

void TrainConfig::write(KeyValueConfig& out) const {
  model.write(out);
  out.set("loss.focal_gamma", loss.focal_gamma);
  out.set("loss.smoothing", loss.smoothing_value);
  out.set("loss.rating_weighting", loss.rating_weighting);
  out.set("loss.unrated_weight", loss.unrated_default_weight);
  out.set("optim.lr_max", optimizer.lr_max);
  out.set("optim.lr_min", optimizer.lr_min);
  out.set("optim.beta1", optimizer.beta1);
  out.set("optim.beta2", optimizer.beta2);
  out.set("optim.epsilon", optimizer.epsilon);
  out.set("optim.weight_decay", optimizer.weight_decay);
  out.set("train.batch_size", batch_size);
  out.set("train.epochs", epochs);
  out.set("train.steps_per_epoch", steps_per_epoch);
  out.set("train.validation_fraction", validation_fraction);
  out.set("train.mixup", mixup);
  out.set("mixup.beta_alpha", mixup_policy.beta_alpha);
  out.set("mixup.probability", mixup_policy.apply_probability);
  out.set("specaug.enabled", augmentation.spec_augment.has_value());
  out.set("specaug.probability", augmentation.spec_augment_probability);
  const SpecAugmentPolicy sa = augmentation.spec_augment.value_or(SpecAugmentPolicy{});
  out.set("specaug.freq_masks", sa.n_freq_masks);
  out.set("specaug.freq_width", sa.max_freq_width);
  out.set("specaug.time_masks", sa.n_time_masks);
  out.set("specaug.time_width", sa.max_time_width);
}

TrainConfig TrainConfig::read(const KeyValueConfig& in) {
  TrainConfig c;
  c.model = ModelConfig::read(in);
  c.loss.focal_gamma = in.get_double("loss.focal_gamma", c.loss.focal_gamma);
  c.loss.smoothing_value = in.get_double("loss.smoothing", c.loss.smoothing_value);
  c.loss.rating_weighting = in.get_bool("loss.rating_weighting", c.loss.rating_weighting);
  c.loss.unrated_default_weight = in.get_double("loss.unrated_weight", c.loss.unrated_default_weight);
  c.optimizer.lr_max = in.get_double("optim.lr_max", c.optimizer.lr_max);
  c.optimizer.lr_min = in.get_double("optim.lr_min", c.optimizer.lr_min);
  c.optimizer.beta1 = in.get_double("optim.beta1", c.optimizer.beta1);
  c.optimizer.beta2 = in.get_double("optim.beta2", c.optimizer.beta2);
  c.optimizer.epsilon = in.get_double("optim.epsilon", c.optimizer.epsilon);
  c.optimizer.weight_decay = in.get_double("optim.weight_decay", c.optimizer.weight_decay);
  c.batch_size = static_cast<int>(in.get_int("train.batch_size", c.batch_size));
  c.epochs = static_cast<int>(in.get_int("train.epochs", c.epochs));
  c.steps_per_epoch = static_cast<int>(in.get_int("train.steps_per_epoch", c.steps_per_epoch));
  c.validation_fraction = in.get_double("train.validation_fraction", c.validation_fraction);
  c.mixup = in.get_bool("train.mixup", c.mixup);
  c.mixup_policy.beta_alpha = in.get_double("mixup.beta_alpha", c.mixup_policy.beta_alpha);
  c.mixup_policy.apply_probability = in.get_double("mixup.probability", c.mixup_policy.apply_probability);
  if (in.get_bool("specaug.enabled", false)) {
    SpecAugmentPolicy sa;
    sa.n_freq_masks = static_cast<int>(in.get_int("specaug.freq_masks", sa.n_freq_masks));
    sa.max_freq_width = static_cast<int>(in.get_int("specaug.freq_width", sa.max_freq_width));
    sa.n_time_masks = static_cast<int>(in.get_int("specaug.time_masks", sa.n_time_masks));
    sa.max_time_width = static_cast<int>(in.get_int("specaug.time_width", sa.max_time_width));
    c.augmentation.spec_augment = sa;
  }
  c.augmentation.spec_augment_probability = in.get_double("specaug.probability", 0.5);
  c.validate();
  return c;
}

std::vector<std::string> TrainConfig::known_keys() {
  KeyValueConfig all;
  TrainConfig{}.write(all);
  std::vector<std::string> keys;
  for (const auto& [k, v] : all.entries()) keys.push_back(k);
  return keys;
}

// ---------------------------------------------------------------------------
// Training loop

void split_train_validation(const std::vector<Recording>& recordings, double fraction, Rng& rng,
                            std::vector<std::size_t>& train, std::vector<std::size_t>& validation) {
  std::map<std::string, std::vector<std::size_t>> by_primary;
  for (std::size_t i = 0; i < recordings.size(); ++i) by_primary[recordings[i].labels.front()].push_back(i);
  std::vector<bool> held(recordings.size(), false);
  for (auto& [name, idx] : by_primary) {
    // Fisher-Yates with our own index draw so the split is portable.
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    }
    const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n_val; ++i) held[idx[i]] = true;
  }
  train.clear();
  validation.clear();
  for (std::size_t i = 0; i < recordings.size(); ++i) (held[i] ? validation : train).push_back(i);
}

ClipInput<float> to_clip_input(const ChunkStack& chunks) {
  ClipInput<float> out;
  out.reserve(chunks.size());
  for (const auto& c : chunks) out.push_back(c.values.cast<float>());
  return out;
}

namespace {

double validation_micro_f1(const Weights<float>& weights, const std::vector<Recording>& recordings,
                           const SpeciesTable& table, FeatureSource& features, std::uint64_t seed) {
  std::vector<std::vector<std::string>> decisions;
  std::vector<std::vector<std::string>> truth;
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < recordings.size(); start += kChunk) {
    std::vector<ClipInput<float>> batch;
    const std::size_t end = std::min(recordings.size(), start + kChunk);
    for (std::size_t i = start; i < end; ++i) {
      Rng rng = derive_rng(seed, i);
      batch.push_back(to_clip_input(features.window_features(recordings[i], rng)));
    }
    const auto out = forward(weights, batch, Mode::kEval);
    for (std::size_t i = start; i < end; ++i) {
      std::vector<std::string> d;
      for (int k = 0; k < out.clip.cols(); ++k) {
        if (out.clip(static_cast<Eigen::Index>(i - start), k) >= 0.5f) d.push_back(table.name(static_cast<std::size_t>(k)));
      }
      decisions.push_back(std::move(d));
      truth.push_back(recordings[i].labels);
    }
  }
  return f1(decisions, truth, F1Mode::kMicro);
}

}  // namespace

TrainResult train(const std::vector<Recording>& recordings, const SpeciesTable& table, const TrainConfig& config,
                  FeatureSource& features, std::uint64_t seed,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  config.validate();
  if (recordings.empty()) throw Error(Errc::kEmptyInput, "train: no recordings");
  if (static_cast<std::size_t>(config.model.n_classes) != table.size()) {
    throw Error(Errc::kShapeMismatch, fmt::format("train: model has {} classes but the species table has {}",
                                                  config.model.n_classes, table.size()));
  }
  if (config.model.n_mels != features.config().spectrogram.n_mels) {
    throw Error(Errc::kShapeMismatch, "train: model n_mels differs from the spectrogram n_mels");
  }

  TrainResult result;
  Rng split_rng = derive_rng(seed, 4);
  split_train_validation(recordings, config.validation_fraction, split_rng, result.train_indices,
                         result.validation_indices);
  std::vector<Recording> train_set;
  std::vector<Recording> val_set;
  for (auto i : result.train_indices) train_set.push_back(recordings[i]);
  for (auto i : result.validation_indices) val_set.push_back(recordings[i]);
  if (train_set.empty()) throw Error(Errc::kEmptyInput, "train: validation split left no training data");

  const long long steps_per_epoch =
      config.steps_per_epoch > 0
          ? config.steps_per_epoch
          : static_cast<long long>((train_set.size() + static_cast<std::size_t>(config.batch_size) - 1) /
                                   static_cast<std::size_t>(config.batch_size));
  const long long total = steps_per_epoch * config.epochs;

  Weights<float> weights(config.model);
  Rng init_rng = derive_rng(seed, 1);
  initialize(weights, init_rng);
  OptimizerState<float> state(weights, config.optimizer, total);
  Rng batch_rng = derive_rng(seed, 2);
  Rng dropout_rng = derive_rng(seed, 3);
  MixupPolicy mixup = config.mixup_policy;
  if (!config.mixup) mixup.apply_probability = 0.0;
  const Eigen::Index n_classes = config.model.n_classes;

  long long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    double lr = 0.0;
    for (long long s = 0; s < steps_per_epoch; ++s) {
      lr = cosine_lr(step, total, config.optimizer.lr_max, config.optimizer.lr_min);
      const Batch batch = sample_batch(train_set, table, static_cast<std::size_t>(config.batch_size), mixup,
                                       batch_rng, features, config.augmentation);
      std::vector<ClipInput<float>> inputs;
      inputs.reserve(batch.items.size());
      for (const auto& item : batch.items) inputs.push_back(to_clip_input(item.chunks));

      ForwardCache<float> cache;
      const auto out = forward(weights, inputs, Mode::kTrain, &dropout_rng, &cache);
      MatrixT<float> d_clip(static_cast<Eigen::Index>(batch.items.size()), n_classes);
      double batch_loss = 0.0;
      std::vector<double> probs(static_cast<std::size_t>(n_classes));
      for (std::size_t b = 0; b < batch.items.size(); ++b) {
        const auto& item = batch.items[b];
        for (Eigen::Index k = 0; k < n_classes; ++k) {
          probs[static_cast<std::size_t>(k)] = out.clip(static_cast<Eigen::Index>(b), k);
        }
        const LossValue lv = weighted_clip_loss(probs, item.labels, item.rating, config.loss);
        if (!std::isfinite(lv.loss)) {
          throw Error(Errc::kNonFinite,
                      fmt::format("train: non-finite loss at epoch {} step {} (recording '{}', rating {})", epoch,
                                  step + 1, train_set[item.recording_index].audio_path.string(), item.rating));
        }
        batch_loss += lv.loss;
        for (Eigen::Index k = 0; k < n_classes; ++k) {
          d_clip(static_cast<Eigen::Index>(b), k) = static_cast<float>(lv.gradient[static_cast<std::size_t>(k)]);
        }
      }
      const Weights<float> grads = backward(weights, cache, d_clip);
      adamw_step(weights, grads, state, lr);
      update_running_stats(weights, cache);
      ++step;
      const double mean_loss = batch_loss / static_cast<double>(batch.items.size());
      result.steps.push_back({epoch, step, lr, mean_loss});
      loss_sum += mean_loss;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.step = step;
    stats.lr = lr;
    stats.loss = loss_sum / static_cast<double>(steps_per_epoch);
    stats.val_micro_f1 = val_set.empty() ? std::nan("")
                                         : validation_micro_f1(weights, val_set, table, features, mix_seed(seed, 5));
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.weights = std::move(weights);
  return result;
}

void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochStats>& epochs) {
  std::string text = "epoch,step,lr,loss,val_micro_f1\n";
  for (const auto& e : epochs) {
    text += fmt::format("{},{},{:.9g},{:.9g},{:.6f}\n", e.epoch, e.step, e.lr, e.loss, e.val_micro_f1);
  }
  write_text_file(path, text);
}

void write_step_log(const std::filesystem::path& path, const std::vector<StepRecord>& steps) {
  std::string text = "epoch,step,lr,loss\n";
  for (const auto& s : steps) text += fmt::format("{},{},{:.17g},{:.9g}\n", s.epoch, s.step, s.lr, s.loss);
  write_text_file(path, text);
}

}  // namespace birdsed
