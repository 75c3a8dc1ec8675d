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
#include <string>
#include <vector>

#include <Eigen/Core>

#include "birdsed/config.hpp"
#include "birdsed/random.hpp"

namespace birdsed {

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct ConvBlockConfig {
  int out_channels = 16;
  int stride = 2;
  bool operator==(const ConvBlockConfig&) const = default;
};

/// Backbone of 3x3 conv (pad 1, no bias) -> batch norm -> ReLU -> 2x2 average
/// pool blocks, then the SED head.
struct ModelConfig {
  std::vector<ConvBlockConfig> blocks{{16, 2}, {32, 2}};
  int n_mels = 128;
  int n_classes = 8;
  double attention_temperature = 1.0;
  double dropout_rate = 0.2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  void validate() const;
  int feature_channels() const { return blocks.back().out_channels; }
  /// (height, width) of the final feature map for an input of the given size.
  /// Throws kShapeMismatch if a block would produce an empty map.
  std::pair<int, int> feature_shape(int height, int width) const;

  /// Keys: model.blocks ("16:2 32:2"), model.n_mels, model.n_classes, ...
  void write(KeyValueConfig& out) const;
  static ModelConfig read(const KeyValueConfig& in);

  bool operator==(const ModelConfig&) const = default;
};

/// Channels x (height * width), row-major spatial.
template <typename Scalar>
struct FeatureMap {
  MatrixT<Scalar> values;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(values.rows()); }
};

template <typename Scalar>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<Scalar> data;
  bool trainable = true;
};

/// Named parameter set. Conv kernels are stored as (out, in * 9) matrices,
/// in-channel major then ky, kx. The same type carries gradients.
template <typename Scalar>
class Weights {
 public:
  using Map = Eigen::Map<MatrixT<Scalar>>;
  using ConstMap = Eigen::Map<const MatrixT<Scalar>>;
  using VecMap = Eigen::Map<VectorT<Scalar>>;
  using ConstVecMap = Eigen::Map<const VectorT<Scalar>>;

  Weights() = default;
  /// Every tensor zero except batch-norm running variances (one).
  explicit Weights(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::vector<Tensor<Scalar>>& tensors() { return tensors_; }
  const std::vector<Tensor<Scalar>>& tensors() const { return tensors_; }
  Tensor<Scalar>& get(const std::string& name);
  const Tensor<Scalar>& get(const std::string& name) const;

  Map conv(std::size_t block);
  ConstMap conv(std::size_t block) const;
  VecMap gamma(std::size_t block);
  ConstVecMap gamma(std::size_t block) const;
  VecMap beta(std::size_t block);
  ConstVecMap beta(std::size_t block) const;
  VecMap running_mean(std::size_t block);
  ConstVecMap running_mean(std::size_t block) const;
  VecMap running_var(std::size_t block);
  ConstVecMap running_var(std::size_t block) const;
  Map class_weight();
  ConstMap class_weight() const;
  VecMap class_bias();
  ConstVecMap class_bias() const;
  Map attention_weight();
  ConstMap attention_weight() const;
  VecMap attention_bias();
  ConstVecMap attention_bias() const;

  void set_zero();
  bool all_finite() const;
  std::size_t parameter_count() const;

  template <typename Other>
  Weights<Other> cast() const;

 private:
  Tensor<Scalar>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<Scalar>& at(std::size_t i) const { return tensors_[i]; }
  std::size_t head_index() const { return 5 * config_.blocks.size(); }

  ModelConfig config_;
  std::vector<Tensor<Scalar>> tensors_;
};

/// He-normal conv kernels, Xavier-uniform head maps, gamma 1, other zero.
template <typename Scalar>
void initialize(Weights<Scalar>& weights, Rng& rng);

enum class Mode { kTrain, kEval };

template <typename Scalar>
struct ChunkOutput {
  VectorT<Scalar> clipwise;        // K
  MatrixT<Scalar> segmentwise;     // K x T'
  MatrixT<Scalar> attention;       // K x T'
  FeatureMap<Scalar> features;     // final backbone map, kept for Grad-CAM
};

template <typename Scalar>
struct ModelOutput {
  std::vector<std::vector<ChunkOutput<Scalar>>> chunks;  // batch x chunks
  MatrixT<Scalar> clip;                                  // batch x K, max over chunks
};

/// One clip: its chunk spectrograms (n_mels x frames each).
template <typename Scalar>
using ClipInput = std::vector<MatrixT<Scalar>>;

template <typename Scalar>
struct BlockCache {
  std::vector<FeatureMap<Scalar>> inputs;  // conv input per image
  std::vector<MatrixT<Scalar>> xhat;       // normalized conv output per image
  VectorT<Scalar> batch_mean;
  VectorT<Scalar> batch_var;               // biased
  VectorT<Scalar> inv_std;
  int conv_height = 0;
  int conv_width = 0;
};

/// Activations retained by a training-mode forward for backward().
template <typename Scalar>
struct ForwardCache {
  bool valid = false;
  Mode mode = Mode::kTrain;
  int batch = 0;
  int n_chunks = 0;
  std::vector<BlockCache<Scalar>> blocks;
  std::vector<ChunkOutput<Scalar>> outputs;   // per image, chunk-major within a clip
  std::vector<MatrixT<Scalar>> reduced;       // head input after dropout, per image
  std::vector<MatrixT<Scalar>> dropout_mask;  // per image; empty without dropout
  std::vector<std::vector<int>> clip_argmax;  // batch x K chunk index
};

/// Runs the network on `batch` (each clip may have any number of chunks, but
/// all clips must have the same count). Training mode uses batch statistics
/// over every chunk of every clip and requires `rng` when dropout is on.
template <typename Scalar>
ModelOutput<Scalar> forward(const Weights<Scalar>& weights, const std::vector<ClipInput<Scalar>>& batch,
                            Mode mode, Rng* rng = nullptr, ForwardCache<Scalar>* cache = nullptr);

/// Gradients of sum_{b,k} d_clip(b,k) * clip(b,k) with respect to every
/// trainable tensor. Running-stat entries are left zero.
template <typename Scalar>
Weights<Scalar> backward(const Weights<Scalar>& weights, const ForwardCache<Scalar>& cache,
                         const MatrixT<Scalar>& d_clip);

/// Exponential moving update of the running batch-norm statistics from a
/// training forward (unbiased variance).
template <typename Scalar>
void update_running_stats(Weights<Scalar>& weights, const ForwardCache<Scalar>& cache);

/// Heatmap over the final feature map (height x width) for class k, in [0, 1].
template <typename Scalar>
MatrixT<Scalar> grad_cam(const Weights<Scalar>& weights, const MatrixT<Scalar>& spectrogram, int target_class);

/// Versioned text header (model config plus `metadata`), then named float32
/// little-endian tensors.
void save_weights(const Weights<float>& weights, const std::filesystem::path& path,
                  const KeyValueConfig& metadata = {});

struct LoadedWeights {
  Weights<float> weights;
  KeyValueConfig metadata;
};

LoadedWeights load_weights(const std::filesystem::path& path);
/// Also checks the stored config equals `expected` (kShapeMismatch otherwise).
LoadedWeights load_weights(const std::filesystem::path& path, const ModelConfig& expected);

namespace layers {

template <typename Scalar>
FeatureMap<Scalar> conv3x3_forward(const FeatureMap<Scalar>& x, const MatrixT<Scalar>& kernel, int stride);
/// Accumulates into d_kernel and returns dx (empty when need_dx is false).
template <typename Scalar>
FeatureMap<Scalar> conv3x3_backward(const FeatureMap<Scalar>& x, const MatrixT<Scalar>& kernel, int stride,
                                    const FeatureMap<Scalar>& dy, MatrixT<Scalar>& d_kernel,
                                    bool need_dx = true);

/// Normalizes each channel over every image and position. Fills xhat and the
/// batch statistics in `cache` when given.
template <typename Scalar>
std::vector<FeatureMap<Scalar>> batchnorm_train_forward(const std::vector<FeatureMap<Scalar>>& x,
                                                        const VectorT<Scalar>& gamma,
                                                        const VectorT<Scalar>& beta, double eps,
                                                        BlockCache<Scalar>* cache = nullptr);
template <typename Scalar>
std::vector<FeatureMap<Scalar>> batchnorm_train_backward(const std::vector<FeatureMap<Scalar>>& dy,
                                                         const BlockCache<Scalar>& cache,
                                                         const VectorT<Scalar>& gamma,
                                                         VectorT<Scalar>& d_gamma,
                                                         VectorT<Scalar>& d_beta);
template <typename Scalar>
FeatureMap<Scalar> batchnorm_eval_forward(const FeatureMap<Scalar>& x, const VectorT<Scalar>& gamma,
                                          const VectorT<Scalar>& beta, const VectorT<Scalar>& mean,
                                          const VectorT<Scalar>& var, double eps);

template <typename Scalar>
FeatureMap<Scalar> avgpool2_forward(const FeatureMap<Scalar>& x);
template <typename Scalar>
FeatureMap<Scalar> avgpool2_backward(const FeatureMap<Scalar>& dy, int in_height, int in_width);

/// Mean plus max over the height axis: channels x width.
template <typename Scalar>
MatrixT<Scalar> freq_reduce_forward(const FeatureMap<Scalar>& x);
template <typename Scalar>
FeatureMap<Scalar> freq_reduce_backward(const FeatureMap<Scalar>& x, const MatrixT<Scalar>& d_out);

template <typename Scalar>
struct SedHeadOutput {
  VectorT<Scalar> clipwise;
  MatrixT<Scalar> segmentwise;
  MatrixT<Scalar> attention;
};

/// features: C x T. segmentwise = sigmoid(Wc F + bc); attention = softmax over
/// T of (Wa F + ba) / temperature; clipwise = row sums of attention * segmentwise.
template <typename Scalar>
SedHeadOutput<Scalar> sed_head_forward(const MatrixT<Scalar>& features, const MatrixT<Scalar>& class_w,
                                       const VectorT<Scalar>& class_b, const MatrixT<Scalar>& att_w,
                                       const VectorT<Scalar>& att_b, double temperature);
/// Returns d features; accumulates the head parameter gradients.
template <typename Scalar>
MatrixT<Scalar> sed_head_backward(const MatrixT<Scalar>& features, const SedHeadOutput<Scalar>& out,
                                  const MatrixT<Scalar>& class_w, const MatrixT<Scalar>& att_w,
                                  double temperature, const VectorT<Scalar>& d_clipwise,
                                  MatrixT<Scalar>& d_class_w, VectorT<Scalar>& d_class_b,
                                  MatrixT<Scalar>& d_att_w, VectorT<Scalar>& d_att_b);

}  // namespace layers

}  // namespace birdsed
