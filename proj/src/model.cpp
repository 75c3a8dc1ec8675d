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

#include "birdsed/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "birdsed/error.hpp"
#include "birdsed/tensor_file.hpp"

namespace birdsed {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  const auto fail = [](const std::string& what) { throw Error(Errc::kInvalidArgument, "model config: " + what); };
  if (blocks.empty()) fail("at least one conv block is required");
  for (const auto& b : blocks) {
    if (b.out_channels < 1) fail("out_channels must be >= 1");
    if (b.stride < 1) fail("stride must be >= 1");
  }
  if (n_mels < 1) fail("n_mels must be >= 1");
  if (n_classes < 1) fail("n_classes must be >= 1");
  if (!(attention_temperature > 0.0)) fail("attention_temperature must be > 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
  if (!(bn_eps > 0.0)) fail("bn_eps must be > 0");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must be in [0, 1]");
}

std::pair<int, int> ModelConfig::feature_shape(int height, int width) const {
  int h = height;
  int w = width;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    h = (h - 1) / blocks[b].stride + 1;
    w = (w - 1) / blocks[b].stride + 1;
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1) {
      throw Error(Errc::kShapeMismatch,
                  fmt::format("input {}x{} is too small: block {} leaves an empty feature map", height,
                              width, b + 1));
    }
  }
  return {h, w};
}

void ModelConfig::write(KeyValueConfig& out) const {
  std::string spec;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (b > 0) spec += ' ';
    spec += fmt::format("{}:{}", blocks[b].out_channels, blocks[b].stride);
  }
  out.set("model.blocks", spec);
  out.set("model.n_mels", n_mels);
  out.set("model.n_classes", n_classes);
  out.set("model.attention_temperature", attention_temperature);
  out.set("model.dropout_rate", dropout_rate);
  out.set("model.bn_eps", bn_eps);
  out.set("model.bn_momentum", bn_momentum);
}

ModelConfig ModelConfig::read(const KeyValueConfig& in) {
  ModelConfig c;
  if (in.contains("model.blocks")) {
    c.blocks.clear();
    for (const auto& item : in.get_list("model.blocks")) {
      const auto colon = item.find(':');
      ConvBlockConfig b;
      try {
        b.out_channels = std::stoi(item.substr(0, colon));
        if (colon != std::string::npos) b.stride = std::stoi(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw Error(Errc::kInvalidArgument, fmt::format("model.blocks: bad entry '{}'", item));
      }
      c.blocks.push_back(b);
    }
  }
  c.n_mels = static_cast<int>(in.get_int("model.n_mels", c.n_mels));
  c.n_classes = static_cast<int>(in.get_int("model.n_classes", c.n_classes));
  c.attention_temperature = in.get_double("model.attention_temperature", c.attention_temperature);
  c.dropout_rate = in.get_double("model.dropout_rate", c.dropout_rate);
  c.bn_eps = in.get_double("model.bn_eps", c.bn_eps);
  c.bn_momentum = in.get_double("model.bn_momentum", c.bn_momentum);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Weights

namespace {

template <typename Scalar>
Tensor<Scalar> make_tensor(std::string name, std::vector<int> shape, bool trainable, Scalar fill = 0) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return Tensor<Scalar>{std::move(name), std::move(shape), std::vector<Scalar>(n, fill), trainable};
}

}  // namespace

template <typename Scalar>
Weights<Scalar>::Weights(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  int in = 1;
  for (std::size_t b = 0; b < config_.blocks.size(); ++b) {
    const int out = config_.blocks[b].out_channels;
    const std::string p = fmt::format("block{}", b + 1);
    tensors_.push_back(make_tensor<Scalar>(p + ".conv.weight", {out, in, 3, 3}, true));
    tensors_.push_back(make_tensor<Scalar>(p + ".bn.weight", {out}, true));
    tensors_.push_back(make_tensor<Scalar>(p + ".bn.bias", {out}, true));
    tensors_.push_back(make_tensor<Scalar>(p + ".bn.running_mean", {out}, false));
    tensors_.push_back(make_tensor<Scalar>(p + ".bn.running_var", {out}, false, Scalar(1)));
    in = out;
  }
  const int k = config_.n_classes;
  tensors_.push_back(make_tensor<Scalar>("head.class.weight", {k, in}, true));
  tensors_.push_back(make_tensor<Scalar>("head.class.bias", {k}, true));
  tensors_.push_back(make_tensor<Scalar>("head.attention.weight", {k, in}, true));
  tensors_.push_back(make_tensor<Scalar>("head.attention.bias", {k}, true));
}

template <typename Scalar>
Tensor<Scalar>& Weights<Scalar>::get(const std::string& name) {
  for (auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw Error(Errc::kInvalidArgument, fmt::format("no tensor named '{}'", name));
}

template <typename Scalar>
const Tensor<Scalar>& Weights<Scalar>::get(const std::string& name) const {
  return const_cast<Weights*>(this)->get(name);
}

#define BIRDSED_MAT_ACCESSOR(fn, index, rows, cols)                                       \
  template <typename Scalar>                                                             \
  typename Weights<Scalar>::Map Weights<Scalar>::fn {                                    \
    auto& t = at(index);                                                                 \
    return Map(t.data.data(), rows, cols);                                               \
  }                                                                                      \
  template <typename Scalar>                                                             \
  typename Weights<Scalar>::ConstMap Weights<Scalar>::fn const {                         \
    const auto& t = at(index);                                                           \
    return ConstMap(t.data.data(), rows, cols);                                          \
  }

#define BIRDSED_VEC_ACCESSOR(fn, index)                                                  \
  template <typename Scalar>                                                             \
  typename Weights<Scalar>::VecMap Weights<Scalar>::fn {                                 \
    auto& t = at(index);                                                                 \
    return VecMap(t.data.data(), static_cast<Eigen::Index>(t.data.size()));              \
  }                                                                                      \
  template <typename Scalar>                                                             \
  typename Weights<Scalar>::ConstVecMap Weights<Scalar>::fn const {                      \
    const auto& t = at(index);                                                           \
    return ConstVecMap(t.data.data(), static_cast<Eigen::Index>(t.data.size()));         \
  }

BIRDSED_MAT_ACCESSOR(conv(std::size_t block), 5 * block, t.shape[0], t.shape[1] * 9)
BIRDSED_VEC_ACCESSOR(gamma(std::size_t block), 5 * block + 1)
BIRDSED_VEC_ACCESSOR(beta(std::size_t block), 5 * block + 2)
BIRDSED_VEC_ACCESSOR(running_mean(std::size_t block), 5 * block + 3)
BIRDSED_VEC_ACCESSOR(running_var(std::size_t block), 5 * block + 4)
BIRDSED_MAT_ACCESSOR(class_weight(), head_index(), t.shape[0], t.shape[1])
BIRDSED_VEC_ACCESSOR(class_bias(), head_index() + 1)
BIRDSED_MAT_ACCESSOR(attention_weight(), head_index() + 2, t.shape[0], t.shape[1])
BIRDSED_VEC_ACCESSOR(attention_bias(), head_index() + 3)

#undef BIRDSED_MAT_ACCESSOR
#undef BIRDSED_VEC_ACCESSOR

template <typename Scalar>
void Weights<Scalar>::set_zero() {
  for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), Scalar(0));
}

template <typename Scalar>
bool Weights<Scalar>::all_finite() const {
  for (const auto& t : tensors_) {
    for (Scalar v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename Scalar>
std::size_t Weights<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) {
    if (t.trainable) n += t.data.size();
  }
  return n;
}

template <typename Scalar>
template <typename Other>
Weights<Other> Weights<Scalar>::cast() const {
  Weights<Other> out(config_);
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto& dst = out.tensors()[i].data;
    const auto& src = tensors_[i].data;
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<Other>(src[j]);
  }
  return out;
}

template <typename Scalar>
void initialize(Weights<Scalar>& weights, Rng& rng) {
  const auto& config = weights.config();
  weights.set_zero();
  for (std::size_t b = 0; b < config.blocks.size(); ++b) {
    auto kernel = weights.conv(b);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(kernel.cols()));
    for (Eigen::Index i = 0; i < kernel.size(); ++i) kernel.data()[i] = static_cast<Scalar>(std_dev * sample_normal(rng));
    weights.gamma(b).setOnes();
    weights.running_var(b).setOnes();
  }
  const double limit = std::sqrt(6.0 / (config.feature_channels() + config.n_classes));
  for (auto head : {weights.class_weight(), weights.attention_weight()}) {
    for (Eigen::Index i = 0; i < head.size(); ++i) head.data()[i] = static_cast<Scalar>(uniform_real(rng, -limit, limit));
  }
}

// ---------------------------------------------------------------------------
// Layers

namespace layers {

namespace {

int conv_out(int n, int stride) { return (n - 1) / stride + 1; }

template <typename Scalar>
MatrixT<Scalar> im2col(const FeatureMap<Scalar>& x, int stride, int out_h, int out_w) {
  const int channels = x.channels();
  MatrixT<Scalar> cols = MatrixT<Scalar>::Zero(channels * 9, out_h * out_w);
  for (int c = 0; c < channels; ++c) {
    const Scalar* src = x.values.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* dst = cols.row(c * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= x.height) continue;
          const Scalar* src_row = src + static_cast<std::ptrdiff_t>(iy) * x.width;
          Scalar* dst_row = dst + static_cast<std::ptrdiff_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < x.width) dst_row[ox] = src_row[ix];
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im(const MatrixT<Scalar>& cols, int stride, int out_h, int out_w, FeatureMap<Scalar>& dx) {
  const int channels = dx.channels();
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = dx.values.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* src = cols.row(c * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= dx.height) continue;
          Scalar* dst_row = dst + static_cast<std::ptrdiff_t>(iy) * dx.width;
          const Scalar* src_row = src + static_cast<std::ptrdiff_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < dx.width) dst_row[ix] += src_row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
FeatureMap<Scalar> conv3x3_forward(const FeatureMap<Scalar>& x, const MatrixT<Scalar>& kernel, int stride) {
  if (kernel.cols() != x.channels() * 9) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("conv: kernel expects {} input channels, got {}", kernel.cols() / 9, x.channels()));
  }
  FeatureMap<Scalar> y;
  y.height = conv_out(x.height, stride);
  y.width = conv_out(x.width, stride);
  y.values.noalias() = kernel * im2col(x, stride, y.height, y.width);
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> conv3x3_backward(const FeatureMap<Scalar>& x, const MatrixT<Scalar>& kernel, int stride,
                                    const FeatureMap<Scalar>& dy, MatrixT<Scalar>& d_kernel, bool need_dx) {
  const MatrixT<Scalar> cols = im2col(x, stride, dy.height, dy.width);
  d_kernel.noalias() += dy.values * cols.transpose();
  FeatureMap<Scalar> dx;
  if (!need_dx) return dx;
  dx.height = x.height;
  dx.width = x.width;
  dx.values = MatrixT<Scalar>::Zero(x.channels(), static_cast<Eigen::Index>(x.height) * x.width);
  const MatrixT<Scalar> d_cols = kernel.transpose() * dy.values;
  col2im(d_cols, stride, dy.height, dy.width, dx);
  return dx;
}

template <typename Scalar>
std::vector<FeatureMap<Scalar>> batchnorm_train_forward(const std::vector<FeatureMap<Scalar>>& x,
                                                        const VectorT<Scalar>& gamma,
                                                        const VectorT<Scalar>& beta, double eps,
                                                        BlockCache<Scalar>* cache) {
  if (x.empty()) throw Error(Errc::kEmptyInput, "batch norm: empty batch");
  const Eigen::Index channels = x.front().values.rows();
  double count = 0.0;
  for (const auto& m : x) count += static_cast<double>(m.values.cols());

  VectorT<Scalar> mean(channels), var(channels), inv_std(channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (const auto& m : x) sum += m.values.row(c).template cast<double>().sum();
    const double mu = sum / count;
    double sq = 0.0;
    for (const auto& m : x) sq += (m.values.row(c).template cast<double>().array() - mu).square().sum();
    const double v = sq / count;
    mean(c) = static_cast<Scalar>(mu);
    var(c) = static_cast<Scalar>(v);
    inv_std(c) = static_cast<Scalar>(1.0 / std::sqrt(v + eps));
  }

  std::vector<FeatureMap<Scalar>> y(x.size());
  if (cache) cache->xhat.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    MatrixT<Scalar> xhat =
        ((x[i].values.colwise() - mean).array().colwise() * inv_std.array()).matrix();
    y[i].height = x[i].height;
    y[i].width = x[i].width;
    y[i].values = ((xhat.array().colwise() * gamma.array()).colwise() + beta.array()).matrix();
    if (cache) cache->xhat[i] = std::move(xhat);
  }
  if (cache) {
    cache->batch_mean = mean;
    cache->batch_var = var;
    cache->inv_std = inv_std;
  }
  return y;
}

template <typename Scalar>
std::vector<FeatureMap<Scalar>> batchnorm_train_backward(const std::vector<FeatureMap<Scalar>>& dy,
                                                         const BlockCache<Scalar>& cache,
                                                         const VectorT<Scalar>& gamma,
                                                         VectorT<Scalar>& d_gamma,
                                                         VectorT<Scalar>& d_beta) {
  const Eigen::Index channels = gamma.size();
  double count = 0.0;
  for (const auto& m : dy) count += static_cast<double>(m.values.cols());
  VectorT<Scalar> sum_dy = VectorT<Scalar>::Zero(channels);
  VectorT<Scalar> sum_dy_xhat = VectorT<Scalar>::Zero(channels);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    sum_dy += dy[i].values.rowwise().sum();
    sum_dy_xhat += dy[i].values.cwiseProduct(cache.xhat[i]).rowwise().sum();
  }
  d_gamma += sum_dy_xhat;
  d_beta += sum_dy;
  const VectorT<Scalar> scale = (gamma.array() * cache.inv_std.array() / static_cast<Scalar>(count)).matrix();
  std::vector<FeatureMap<Scalar>> dx(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dx[i].height = dy[i].height;
    dx[i].width = dy[i].width;
    MatrixT<Scalar> t = static_cast<Scalar>(count) * dy[i].values;
    t.colwise() -= sum_dy;
    t -= (cache.xhat[i].array().colwise() * sum_dy_xhat.array()).matrix();
    dx[i].values = (t.array().colwise() * scale.array()).matrix();
  }
  return dx;
}

template <typename Scalar>
FeatureMap<Scalar> batchnorm_eval_forward(const FeatureMap<Scalar>& x, const VectorT<Scalar>& gamma,
                                          const VectorT<Scalar>& beta, const VectorT<Scalar>& mean,
                                          const VectorT<Scalar>& var, double eps) {
  const VectorT<Scalar> scale =
      (gamma.array() / (var.array() + static_cast<Scalar>(eps)).sqrt()).matrix();
  const VectorT<Scalar> shift = beta - (mean.array() * scale.array()).matrix();
  FeatureMap<Scalar> y;
  y.height = x.height;
  y.width = x.width;
  y.values = ((x.values.array().colwise() * scale.array()).colwise() + shift.array()).matrix();
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> avgpool2_forward(const FeatureMap<Scalar>& x) {
  FeatureMap<Scalar> y;
  y.height = x.height / 2;
  y.width = x.width / 2;
  y.values.resize(x.channels(), static_cast<Eigen::Index>(y.height) * y.width);
  for (int c = 0; c < x.channels(); ++c) {
    const Scalar* src = x.values.row(c).data();
    Scalar* dst = y.values.row(c).data();
    for (int oy = 0; oy < y.height; ++oy) {
      const Scalar* r0 = src + static_cast<std::ptrdiff_t>(2 * oy) * x.width;
      const Scalar* r1 = r0 + x.width;
      for (int ox = 0; ox < y.width; ++ox) {
        dst[oy * y.width + ox] =
            static_cast<Scalar>(0.25) * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
      }
    }
  }
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> avgpool2_backward(const FeatureMap<Scalar>& dy, int in_height, int in_width) {
  FeatureMap<Scalar> dx;
  dx.height = in_height;
  dx.width = in_width;
  dx.values = MatrixT<Scalar>::Zero(dy.channels(), static_cast<Eigen::Index>(in_height) * in_width);
  for (int c = 0; c < dy.channels(); ++c) {
    const Scalar* src = dy.values.row(c).data();
    Scalar* dst = dx.values.row(c).data();
    for (int oy = 0; oy < dy.height; ++oy) {
      Scalar* r0 = dst + static_cast<std::ptrdiff_t>(2 * oy) * in_width;
      Scalar* r1 = r0 + in_width;
      for (int ox = 0; ox < dy.width; ++ox) {
        const Scalar g = static_cast<Scalar>(0.25) * src[oy * dy.width + ox];
        r0[2 * ox] = g;
        r0[2 * ox + 1] = g;
        r1[2 * ox] = g;
        r1[2 * ox + 1] = g;
      }
    }
  }
  return dx;
}

template <typename Scalar>
MatrixT<Scalar> freq_reduce_forward(const FeatureMap<Scalar>& x) {
  MatrixT<Scalar> out(x.channels(), x.width);
  for (int c = 0; c < x.channels(); ++c) {
    const Scalar* src = x.values.row(c).data();
    for (int t = 0; t < x.width; ++t) {
      Scalar sum = 0;
      Scalar best = src[t];
      for (int h = 0; h < x.height; ++h) {
        const Scalar v = src[h * x.width + t];
        sum += v;
        best = std::max(best, v);
      }
      out(c, t) = sum / static_cast<Scalar>(x.height) + best;
    }
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> freq_reduce_backward(const FeatureMap<Scalar>& x, const MatrixT<Scalar>& d_out) {
  FeatureMap<Scalar> dx;
  dx.height = x.height;
  dx.width = x.width;
  dx.values.resize(x.channels(), x.values.cols());
  const Scalar inv_h = static_cast<Scalar>(1) / static_cast<Scalar>(x.height);
  for (int c = 0; c < x.channels(); ++c) {
    const Scalar* src = x.values.row(c).data();
    Scalar* dst = dx.values.row(c).data();
    for (int t = 0; t < x.width; ++t) {
      const Scalar g = d_out(c, t);
      int arg = 0;
      for (int h = 0; h < x.height; ++h) {
        dst[h * x.width + t] = g * inv_h;
        if (src[h * x.width + t] > src[arg * x.width + t]) arg = h;
      }
      dst[arg * x.width + t] += g;
    }
  }
  return dx;
}

template <typename Scalar>
SedHeadOutput<Scalar> sed_head_forward(const MatrixT<Scalar>& features, const MatrixT<Scalar>& class_w,
                                       const VectorT<Scalar>& class_b, const MatrixT<Scalar>& att_w,
                                       const VectorT<Scalar>& att_b, double temperature) {
  SedHeadOutput<Scalar> out;
  MatrixT<Scalar> logits = class_w * features;
  logits.colwise() += class_b;
  out.segmentwise = (Scalar(1) / (Scalar(1) + (-logits.array()).exp())).matrix();

  MatrixT<Scalar> a = att_w * features;
  a.colwise() += att_b;
  a /= static_cast<Scalar>(temperature);
  const VectorT<Scalar> row_max = a.rowwise().maxCoeff();
  a.colwise() -= row_max;
  out.attention = a.array().exp().matrix();
  const VectorT<Scalar> row_sum = out.attention.rowwise().sum();
  out.attention = (out.attention.array().colwise() / row_sum.array()).matrix();

  out.clipwise = out.attention.cwiseProduct(out.segmentwise).rowwise().sum();
  return out;
}

template <typename Scalar>
MatrixT<Scalar> sed_head_backward(const MatrixT<Scalar>& features, const SedHeadOutput<Scalar>& out,
                                  const MatrixT<Scalar>& class_w, const MatrixT<Scalar>& att_w,
                                  double temperature, const VectorT<Scalar>& d_clipwise,
                                  MatrixT<Scalar>& d_class_w, VectorT<Scalar>& d_class_b,
                                  MatrixT<Scalar>& d_att_w, VectorT<Scalar>& d_att_b) {
  const auto& seg = out.segmentwise;
  const auto& att = out.attention;
  // d clip / d seg = att, d clip / d att = seg (per class row).
  const MatrixT<Scalar> d_seg = (att.array().colwise() * d_clipwise.array()).matrix();
  const MatrixT<Scalar> d_att = (seg.array().colwise() * d_clipwise.array()).matrix();
  const MatrixT<Scalar> d_logit = (d_seg.array() * seg.array() * (Scalar(1) - seg.array())).matrix();
  const VectorT<Scalar> inner = att.cwiseProduct(d_att).rowwise().sum();
  MatrixT<Scalar> d_a = (att.array() * (d_att.array().colwise() - inner.array())).matrix();
  d_a /= static_cast<Scalar>(temperature);

  d_class_w.noalias() += d_logit * features.transpose();
  d_class_b += d_logit.rowwise().sum();
  d_att_w.noalias() += d_a * features.transpose();
  d_att_b += d_a.rowwise().sum();
  MatrixT<Scalar> d_features = class_w.transpose() * d_logit;
  d_features.noalias() += att_w.transpose() * d_a;
  return d_features;
}

}  // namespace layers

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

template <typename Scalar>
void relu_inplace(FeatureMap<Scalar>& x) {
  x.values = x.values.cwiseMax(Scalar(0));
}

template <typename Scalar>
void check_batch(const Weights<Scalar>& weights, const std::vector<ClipInput<Scalar>>& batch) {
  const auto& config = weights.config();
  if (batch.empty()) throw Error(Errc::kEmptyInput, "forward: empty batch");
  const std::size_t n_chunks = batch.front().size();
  if (n_chunks == 0) throw Error(Errc::kEmptyInput, "forward: clip without chunks");
  for (const auto& clip : batch) {
    if (clip.size() != n_chunks) {
      throw Error(Errc::kShapeMismatch,
                  fmt::format("forward: clips have {} and {} chunks", n_chunks, clip.size()));
    }
    for (const auto& chunk : clip) {
      if (chunk.rows() != config.n_mels) {
        throw Error(Errc::kShapeMismatch,
                    fmt::format("forward: expected {} mel rows, got {}", config.n_mels, chunk.rows()));
      }
      config.feature_shape(static_cast<int>(chunk.rows()), static_cast<int>(chunk.cols()));
    }
  }
  if (!weights.all_finite()) throw Error(Errc::kNonFinite, "forward: weights contain non-finite values");
}

}  // namespace

template <typename Scalar>
ModelOutput<Scalar> forward(const Weights<Scalar>& weights, const std::vector<ClipInput<Scalar>>& batch,
                            Mode mode, Rng* rng, ForwardCache<Scalar>* cache) {
  check_batch(weights, batch);
  const auto& config = weights.config();
  const bool train = mode == Mode::kTrain;
  const bool dropout = train && config.dropout_rate > 0.0;
  if (dropout && rng == nullptr) throw Error(Errc::kInvalidArgument, "forward: dropout needs an rng");

  const int n_clips = static_cast<int>(batch.size());
  const int n_chunks = static_cast<int>(batch.front().size());
  std::vector<FeatureMap<Scalar>> maps;
  maps.reserve(static_cast<std::size_t>(n_clips * n_chunks));
  for (const auto& clip : batch) {
    for (const auto& chunk : clip) {
      FeatureMap<Scalar> m;
      m.height = static_cast<int>(chunk.rows());
      m.width = static_cast<int>(chunk.cols());
      m.values = Eigen::Map<const MatrixT<Scalar>>(chunk.data(), 1, chunk.size());
      maps.push_back(std::move(m));
    }
  }

  if (cache) {
    *cache = ForwardCache<Scalar>{};
    cache->mode = mode;
    cache->batch = n_clips;
    cache->n_chunks = n_chunks;
    cache->blocks.resize(config.blocks.size());
  }

  for (std::size_t b = 0; b < config.blocks.size(); ++b) {
    const MatrixT<Scalar> kernel = weights.conv(b);
    const VectorT<Scalar> gamma = weights.gamma(b);
    const VectorT<Scalar> beta = weights.beta(b);
    BlockCache<Scalar>* bc = cache ? &cache->blocks[b] : nullptr;
    std::vector<FeatureMap<Scalar>> conv(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
      conv[i] = layers::conv3x3_forward(maps[i], kernel, config.blocks[b].stride);
    }
    if (bc) {
      bc->inputs = std::move(maps);
      bc->conv_height = conv.front().height;
      bc->conv_width = conv.front().width;
    }
    std::vector<FeatureMap<Scalar>> normed;
    if (train) {
      normed = layers::batchnorm_train_forward(conv, gamma, beta, config.bn_eps, bc);
    } else {
      const VectorT<Scalar> mean = weights.running_mean(b);
      const VectorT<Scalar> var = weights.running_var(b);
      normed.resize(conv.size());
      for (std::size_t i = 0; i < conv.size(); ++i) {
        normed[i] = layers::batchnorm_eval_forward(conv[i], gamma, beta, mean, var, config.bn_eps);
      }
      if (bc) {
        bc->inv_std = ((var.array() + static_cast<Scalar>(config.bn_eps)).rsqrt()).matrix();
        bc->xhat.resize(conv.size());
        for (std::size_t i = 0; i < conv.size(); ++i) {
          bc->xhat[i] = ((conv[i].values.colwise() - mean).array().colwise() * bc->inv_std.array()).matrix();
        }
      }
    }
    maps.resize(normed.size());
    for (std::size_t i = 0; i < normed.size(); ++i) {
      relu_inplace(normed[i]);
      maps[i] = layers::avgpool2_forward(normed[i]);
    }
  }

  ModelOutput<Scalar> out;
  out.chunks.resize(static_cast<std::size_t>(n_clips));
  out.clip.resize(n_clips, config.n_classes);
  const MatrixT<Scalar> class_w = weights.class_weight();
  const VectorT<Scalar> class_b = weights.class_bias();
  const MatrixT<Scalar> att_w = weights.attention_weight();
  const VectorT<Scalar> att_b = weights.attention_bias();
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - config.dropout_rate));

  for (int b = 0; b < n_clips; ++b) {
    auto& chunk_outputs = out.chunks[static_cast<std::size_t>(b)];
    chunk_outputs.resize(static_cast<std::size_t>(n_chunks));
    std::vector<int> argmax(static_cast<std::size_t>(config.n_classes), 0);
    for (int j = 0; j < n_chunks; ++j) {
      const std::size_t i = static_cast<std::size_t>(b * n_chunks + j);
      MatrixT<Scalar> reduced = layers::freq_reduce_forward(maps[i]);
      MatrixT<Scalar> mask;
      if (dropout) {
        mask.resize(reduced.rows(), reduced.cols());
        for (Eigen::Index e = 0; e < mask.size(); ++e) {
          mask.data()[e] = bernoulli(*rng, config.dropout_rate) ? Scalar(0) : keep_scale;
        }
        reduced = reduced.cwiseProduct(mask);
      }
      auto head = layers::sed_head_forward(reduced, class_w, class_b, att_w, att_b,
                                           config.attention_temperature);
      ChunkOutput<Scalar>& co = chunk_outputs[static_cast<std::size_t>(j)];
      co.clipwise = std::move(head.clipwise);
      co.segmentwise = std::move(head.segmentwise);
      co.attention = std::move(head.attention);
      co.features = std::move(maps[i]);
      for (int k = 0; k < config.n_classes; ++k) {
        if (j == 0 || co.clipwise(k) > out.clip(b, k)) {
          out.clip(b, k) = co.clipwise(k);
          argmax[static_cast<std::size_t>(k)] = j;
        }
      }
      if (cache) {
        cache->reduced.push_back(std::move(reduced));
        cache->dropout_mask.push_back(std::move(mask));
        cache->outputs.push_back(co);
      }
    }
    if (cache) cache->clip_argmax.push_back(std::move(argmax));
  }
  if (cache) cache->valid = true;
  return out;
}

template <typename Scalar>
Weights<Scalar> backward(const Weights<Scalar>& weights, const ForwardCache<Scalar>& cache,
                         const MatrixT<Scalar>& d_clip) {
  if (!cache.valid) throw Error(Errc::kMissingCache, "backward: no cached forward pass");
  const auto& config = weights.config();
  if (d_clip.rows() != cache.batch || d_clip.cols() != config.n_classes) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("backward: gradient is {}x{}, expected {}x{}", d_clip.rows(), d_clip.cols(),
                            cache.batch, config.n_classes));
  }
  Weights<Scalar> grads(config);
  grads.set_zero();

  const MatrixT<Scalar> class_w = weights.class_weight();
  const MatrixT<Scalar> att_w = weights.attention_weight();
  MatrixT<Scalar> d_class_w = MatrixT<Scalar>::Zero(class_w.rows(), class_w.cols());
  MatrixT<Scalar> d_att_w = MatrixT<Scalar>::Zero(att_w.rows(), att_w.cols());
  VectorT<Scalar> d_class_b = VectorT<Scalar>::Zero(config.n_classes);
  VectorT<Scalar> d_att_b = VectorT<Scalar>::Zero(config.n_classes);

  const std::size_t n_images = cache.outputs.size();
  std::vector<FeatureMap<Scalar>> d_maps(n_images);
  for (int b = 0; b < cache.batch; ++b) {
    for (int j = 0; j < cache.n_chunks; ++j) {
      const std::size_t i = static_cast<std::size_t>(b * cache.n_chunks + j);
      VectorT<Scalar> d_clipwise = VectorT<Scalar>::Zero(config.n_classes);
      for (int k = 0; k < config.n_classes; ++k) {
        if (cache.clip_argmax[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)] == j) {
          d_clipwise(k) = d_clip(b, k);
        }
      }
      const auto& co = cache.outputs[i];
      layers::SedHeadOutput<Scalar> head{co.clipwise, co.segmentwise, co.attention};
      MatrixT<Scalar> d_reduced =
          layers::sed_head_backward(cache.reduced[i], head, class_w, att_w, config.attention_temperature,
                                    d_clipwise, d_class_w, d_class_b, d_att_w, d_att_b);
      if (cache.dropout_mask[i].size() > 0) d_reduced = d_reduced.cwiseProduct(cache.dropout_mask[i]);
      d_maps[i] = layers::freq_reduce_backward(co.features, d_reduced);
    }
  }
  grads.class_weight() = d_class_w;
  grads.class_bias() = d_class_b;
  grads.attention_weight() = d_att_w;
  grads.attention_bias() = d_att_b;

  for (std::size_t bi = config.blocks.size(); bi-- > 0;) {
    const BlockCache<Scalar>& bc = cache.blocks[bi];
    const VectorT<Scalar> gamma = weights.gamma(bi);
    const VectorT<Scalar> beta = weights.beta(bi);
    std::vector<FeatureMap<Scalar>> d_norm(n_images);
    for (std::size_t i = 0; i < n_images; ++i) {
      FeatureMap<Scalar> d_pool = layers::avgpool2_backward(d_maps[i], bc.conv_height, bc.conv_width);
      // ReLU gate from the recomputed batch-norm output.
      const MatrixT<Scalar> pre = ((bc.xhat[i].array().colwise() * gamma.array()).colwise() + beta.array()).matrix();
      d_pool.values = (pre.array() > Scalar(0)).select(d_pool.values, Scalar(0));
      d_norm[i] = std::move(d_pool);
    }
    VectorT<Scalar> d_gamma = VectorT<Scalar>::Zero(gamma.size());
    VectorT<Scalar> d_beta = VectorT<Scalar>::Zero(gamma.size());
    std::vector<FeatureMap<Scalar>> d_conv;
    if (cache.mode == Mode::kTrain) {
      d_conv = layers::batchnorm_train_backward(d_norm, bc, gamma, d_gamma, d_beta);
    } else {
      d_conv.resize(n_images);
      const VectorT<Scalar> scale = (gamma.array() * bc.inv_std.array()).matrix();
      for (std::size_t i = 0; i < n_images; ++i) {
        d_gamma += d_norm[i].values.cwiseProduct(bc.xhat[i]).rowwise().sum();
        d_beta += d_norm[i].values.rowwise().sum();
        d_conv[i].height = d_norm[i].height;
        d_conv[i].width = d_norm[i].width;
        d_conv[i].values = (d_norm[i].values.array().colwise() * scale.array()).matrix();
      }
    }
    grads.gamma(bi) = d_gamma;
    grads.beta(bi) = d_beta;

    const MatrixT<Scalar> kernel = weights.conv(bi);
    MatrixT<Scalar> d_kernel = MatrixT<Scalar>::Zero(kernel.rows(), kernel.cols());
    const bool need_dx = bi > 0;
    for (std::size_t i = 0; i < n_images; ++i) {
      d_maps[i] = layers::conv3x3_backward(bc.inputs[i], kernel, config.blocks[bi].stride, d_conv[i],
                                           d_kernel, need_dx);
    }
    grads.conv(bi) = d_kernel;
  }
  return grads;
}

template <typename Scalar>
void update_running_stats(Weights<Scalar>& weights, const ForwardCache<Scalar>& cache) {
  if (!cache.valid || cache.mode != Mode::kTrain) {
    throw Error(Errc::kMissingCache, "update_running_stats: needs a training-mode forward");
  }
  const auto m = static_cast<Scalar>(weights.config().bn_momentum);
  for (std::size_t b = 0; b < cache.blocks.size(); ++b) {
    const auto& bc = cache.blocks[b];
    double count = 0.0;
    for (const auto& x : bc.xhat) count += static_cast<double>(x.cols());
    const auto correction = static_cast<Scalar>(count > 1.0 ? count / (count - 1.0) : 1.0);
    weights.running_mean(b) = (Scalar(1) - m) * weights.running_mean(b) + m * bc.batch_mean;
    weights.running_var(b) = (Scalar(1) - m) * weights.running_var(b) + (m * correction) * bc.batch_var;
  }
}

template <typename Scalar>
MatrixT<Scalar> grad_cam(const Weights<Scalar>& weights, const MatrixT<Scalar>& spectrogram, int target_class) {
  const auto& config = weights.config();
  if (target_class < 0 || target_class >= config.n_classes) {
    throw Error(Errc::kInvalidArgument,
                fmt::format("grad_cam: class {} outside [0, {})", target_class, config.n_classes));
  }
  std::vector<ClipInput<Scalar>> batch{{spectrogram}};
  ForwardCache<Scalar> cache;
  forward(weights, batch, Mode::kEval, nullptr, &cache);

  const auto& co = cache.outputs.front();
  MatrixT<Scalar> d_class_w = MatrixT<Scalar>::Zero(config.n_classes, config.feature_channels());
  MatrixT<Scalar> d_att_w = d_class_w;
  VectorT<Scalar> d_class_b = VectorT<Scalar>::Zero(config.n_classes);
  VectorT<Scalar> d_att_b = d_class_b;
  VectorT<Scalar> d_clipwise = VectorT<Scalar>::Zero(config.n_classes);
  d_clipwise(target_class) = 1;
  layers::SedHeadOutput<Scalar> head{co.clipwise, co.segmentwise, co.attention};
  const MatrixT<Scalar> d_reduced = layers::sed_head_backward(
      cache.reduced.front(), head, MatrixT<Scalar>(weights.class_weight()),
      MatrixT<Scalar>(weights.attention_weight()), config.attention_temperature, d_clipwise, d_class_w,
      d_class_b, d_att_w, d_att_b);
  const FeatureMap<Scalar> d_features = layers::freq_reduce_backward(co.features, d_reduced);

  const VectorT<Scalar> alpha = d_features.values.rowwise().mean();
  const VectorT<Scalar> cam_flat = (co.features.values.transpose() * alpha).cwiseMax(Scalar(0));
  MatrixT<Scalar> cam = Eigen::Map<const MatrixT<Scalar>>(cam_flat.data(), co.features.height, co.features.width);
  const Scalar lo = cam.minCoeff();
  const Scalar hi = cam.maxCoeff();
  if (hi > lo) {
    cam = ((cam.array() - lo) / (hi - lo)).matrix();
  } else {
    cam.setZero();
  }
  return cam;
}

// ---------------------------------------------------------------------------
// Weights file

namespace {

constexpr const char* kWeightsMagic = "birdsed-weights";
constexpr int kWeightsVersion = 1;

}  // namespace

void save_weights(const Weights<float>& weights, const std::filesystem::path& path,
                  const KeyValueConfig& metadata) {
  KeyValueConfig header;
  for (const auto& [key, value] : metadata.entries()) {
    if (key.rfind("model.", 0) == 0) {
      throw Error(Errc::kInvalidArgument, fmt::format("save_weights: metadata key '{}' is reserved", key));
    }
    header.set(key, value);
  }
  weights.config().write(header);
  std::string text = fmt::format("{} {}\n", kWeightsMagic, kWeightsVersion);
  text += header.serialize();
  text += "END\n";

  std::vector<unsigned char> bytes(text.begin(), text.end());
  detail::append_u32(bytes, static_cast<std::uint32_t>(weights.tensors().size()));
  for (const auto& t : weights.tensors()) {
    detail::append_u32(bytes, static_cast<std::uint32_t>(t.name.size()));
    bytes.insert(bytes.end(), t.name.begin(), t.name.end());
    detail::append_u32(bytes, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::append_u64(bytes, static_cast<std::uint64_t>(d));
    for (float v : t.data) detail::append_f32(bytes, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kIo, fmt::format("cannot write '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::kIo, fmt::format("write failed for '{}'", path.string()));
}

LoadedWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kFileNotFound, fmt::format("cannot open weights '{}'", path.string()));
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  const auto corrupt = [&](const std::string& what) {
    return Error(Errc::kCorruptFile, fmt::format("weights '{}': {}", where, what));
  };

  const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const auto first_nl = view.find('\n');
  if (first_nl == std::string_view::npos) throw corrupt("missing header");
  const std::string first(view.substr(0, first_nl));
  const std::string magic = std::string(kWeightsMagic) + " ";
  if (first.rfind(magic, 0) != 0) throw corrupt("not a weights file");
  if (first != fmt::format("{} {}", kWeightsMagic, kWeightsVersion)) {
    throw Error(Errc::kVersionMismatch,
                fmt::format("weights '{}': version '{}' is not supported (expected {})", where,
                            first.substr(magic.size()), kWeightsVersion));
  }
  const auto end_marker = view.find("\nEND\n", first_nl);
  if (end_marker == std::string_view::npos) throw corrupt("unterminated header");
  const KeyValueConfig header =
      KeyValueConfig::parse(std::string(view.substr(first_nl + 1, end_marker - first_nl)));

  LoadedWeights result;
  ModelConfig config;
  try {
    config = ModelConfig::read(header);
  } catch (const Error& e) {
    throw corrupt(e.what());
  }
  result.weights = Weights<float>(config);
  for (const auto& [key, value] : header.entries()) {
    if (key.rfind("model.", 0) != 0) result.metadata.set(key, value);
  }

  std::size_t pos = end_marker + 5;
  const auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw corrupt("truncated tensor data");
  };
  need(4);
  const std::uint32_t count = detail::parse_u32(&bytes[pos]);
  pos += 4;
  auto& tensors = result.weights.tensors();
  if (count != tensors.size()) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("weights '{}': {} tensors, config implies {}", where, count, tensors.size()));
  }
  for (auto& t : tensors) {
    need(4);
    const std::uint32_t name_len = detail::parse_u32(&bytes[pos]);
    pos += 4;
    need(name_len);
    const std::string name(reinterpret_cast<const char*>(&bytes[pos]), name_len);
    pos += name_len;
    if (name != t.name) {
      throw Error(Errc::kShapeMismatch,
                  fmt::format("weights '{}': found tensor '{}' where '{}' was expected", where, name, t.name));
    }
    need(4);
    const std::uint32_t ndim = detail::parse_u32(&bytes[pos]);
    pos += 4;
    need(static_cast<std::size_t>(ndim) * 8);
    std::vector<int> shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int>(detail::parse_u64(&bytes[pos]));
      pos += 8;
    }
    if (shape != t.shape) {
      throw Error(Errc::kShapeMismatch, fmt::format("weights '{}': tensor '{}' has the wrong shape", where, name));
    }
    need(t.data.size() * 4);
    for (auto& v : t.data) {
      v = detail::parse_f32(&bytes[pos]);
      pos += 4;
    }
  }
  if (pos != bytes.size()) throw corrupt("trailing bytes after tensors");
  if (!result.weights.all_finite()) {
    throw Error(Errc::kNonFinite, fmt::format("weights '{}': non-finite values", where));
  }
  return result;
}

LoadedWeights load_weights(const std::filesystem::path& path, const ModelConfig& expected) {
  LoadedWeights loaded = load_weights(path);
  const ModelConfig& found = loaded.weights.config();
  if (!(found == expected)) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("weights '{}': stored model ({} classes, {} blocks) does not match the "
                            "configured model ({} classes, {} blocks)",
                            path.string(), found.n_classes, found.blocks.size(), expected.n_classes,
                            expected.blocks.size()));
  }
  return loaded;
}

// ---------------------------------------------------------------------------
// Instantiations

#define BIRDSED_INSTANTIATE(S)                                                                         \
  template class Weights<S>;                                                                          \
  template Weights<float> Weights<S>::cast<float>() const;                                            \
  template Weights<double> Weights<S>::cast<double>() const;                                          \
  template void initialize<S>(Weights<S>&, Rng&);                                                     \
  template ModelOutput<S> forward<S>(const Weights<S>&, const std::vector<ClipInput<S>>&, Mode, Rng*, \
                                     ForwardCache<S>*);                                               \
  template Weights<S> backward<S>(const Weights<S>&, const ForwardCache<S>&, const MatrixT<S>&);      \
  template void update_running_stats<S>(Weights<S>&, const ForwardCache<S>&);                         \
  template MatrixT<S> grad_cam<S>(const Weights<S>&, const MatrixT<S>&, int);                         \
  namespace layers {                                                                                  \
  template FeatureMap<S> conv3x3_forward<S>(const FeatureMap<S>&, const MatrixT<S>&, int);           \
  template FeatureMap<S> conv3x3_backward<S>(const FeatureMap<S>&, const MatrixT<S>&, int,            \
                                             const FeatureMap<S>&, MatrixT<S>&, bool);                \
  template std::vector<FeatureMap<S>> batchnorm_train_forward<S>(                                     \
      const std::vector<FeatureMap<S>>&, const VectorT<S>&, const VectorT<S>&, double, BlockCache<S>*); \
  template std::vector<FeatureMap<S>> batchnorm_train_backward<S>(                                    \
      const std::vector<FeatureMap<S>>&, const BlockCache<S>&, const VectorT<S>&, VectorT<S>&,         \
      VectorT<S>&);                                                                                   \
  template FeatureMap<S> batchnorm_eval_forward<S>(const FeatureMap<S>&, const VectorT<S>&,           \
                                                   const VectorT<S>&, const VectorT<S>&,              \
                                                   const VectorT<S>&, double);                        \
  template FeatureMap<S> avgpool2_forward<S>(const FeatureMap<S>&);                                   \
  template FeatureMap<S> avgpool2_backward<S>(const FeatureMap<S>&, int, int);                        \
  template MatrixT<S> freq_reduce_forward<S>(const FeatureMap<S>&);                                   \
  template FeatureMap<S> freq_reduce_backward<S>(const FeatureMap<S>&, const MatrixT<S>&);            \
  template SedHeadOutput<S> sed_head_forward<S>(const MatrixT<S>&, const MatrixT<S>&,                 \
                                                const VectorT<S>&, const MatrixT<S>&,                 \
                                                const VectorT<S>&, double);                           \
  template MatrixT<S> sed_head_backward<S>(const MatrixT<S>&, const SedHeadOutput<S>&,                \
                                           const MatrixT<S>&, const MatrixT<S>&, double,              \
                                           const VectorT<S>&, MatrixT<S>&, VectorT<S>&, MatrixT<S>&,  \
                                           VectorT<S>&);                                              \
  }

BIRDSED_INSTANTIATE(float)
BIRDSED_INSTANTIATE(double)

#undef BIRDSED_INSTANTIATE

}  // namespace birdsed
