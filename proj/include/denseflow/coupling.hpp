// Copyright 2026 The denseflow-cpp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DENSEFLOW_COUPLING_HPP
#define DENSEFLOW_COUPLING_HPP

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "denseflow/bijections.hpp"
#include "denseflow/nn.hpp"

namespace denseflow {

struct CouplingNetConfig {
  int proj_channels = 16;
  int dense_layers = 3;
  int dense_growth = 8;
  int attn_heads = 1;
  int attn_landmarks = 0;  // 0 selects min(16, h*w)
  int newton_iters = 6;
};

// Landmark count actually used at a resolution with `seq` positions.
int resolve_landmarks(int requested, std::int64_t seq);

namespace attention {

/// Averages contiguous groups of ceil(n/m) rows of x [b, n, d].
template <typename T>
Tensor<T> segment_means(const Tensor<T>& x, int landmarks);

/// Iterative pseudo-inverse of each [m, m] matrix in a [b, m, m] batch.
template <typename T>
Tensor<T> newton_schulz_pinv(const Tensor<T>& a, int iterations);

/// The three row-stochastic factors of the approximation.
template <typename T>
struct NystromFactors {
  Tensor<T> left;    // softmax(Q Kl^T / sqrt(d)), [b, n, m]
  Tensor<T> middle;  // softmax(Ql Kl^T / sqrt(d)), [b, m, m]
  Tensor<T> right;   // softmax(Ql K^T / sqrt(d)), [b, m, n]
};

template <typename T>
NystromFactors<T> nystrom_factors(const Tensor<T>& q, const Tensor<T>& k, int landmarks);

/// Approximate softmax attention over [b, n, d] inputs.
template <typename T>
Tensor<T> nystrom(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int landmarks, int iterations);

/// softmax(Q K^T / sqrt(d)) V.
template <typename T>
Tensor<T> exact(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

}  // namespace attention

/// n layers of norm -> ReLU -> 3x3 conv, each fed the concat of the input and
/// all earlier outputs.
template <typename T>
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(int in_channels, int layers, int growth, Rng& rng, Init conv_init = Init::standard);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const;
  void set_training(bool training);
  int out_channels() const { return in_ + static_cast<int>(convs_.size()) * growth_; }
  int layer_in_channels(int k) const { return in_ + k * growth_; }

 private:
  int in_ = 0;
  int growth_ = 0;
  std::vector<BatchNorm2d<T>> norms_;
  std::vector<Conv2d<T>> convs_;
};

/// Self-attention over spatial positions with Nystrom landmarks and a learned
/// additive position embedding.
template <typename T>
class NystromAttention {
 public:
  NystromAttention() = default;
  NystromAttention(int channels, int height, int width, int landmarks, int heads, int iterations, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  // Attention output before the output projection, [b, n, c].
  Tensor<T> attend(const Tensor<T>& x) const;
  // Query, key and value sequences, each [b, n, c].
  struct Projected {
    Tensor<T> q, k, v;
  };
  Projected project(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const;
  int landmarks() const { return landmarks_; }
  int iterations() const { return iterations_; }

 private:
  int channels_ = 0;
  int heads_ = 1;
  int landmarks_ = 1;
  int iterations_ = 6;
  Tensor<T> position_;  // [1, c, h, w]
  Conv2d<T> q_, k_, v_, out_;
};

/// Projection, parallel dense block and attention, then a norm-ReLU-conv blend
/// to (s_raw, t). The blend conv starts at zero.
template <typename T>
class FusionCouplingNet final : public CouplingNet<T> {
 public:
  FusionCouplingNet(int in_channels, int out_channels, int height, int width, const CouplingNetConfig& cfg,
                    Rng& rng);

  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& x) const override;
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;
  void set_training(bool training) override;

  int blend_in_channels() const { return dense_.out_channels() + proj_.out_channels(); }
  const DenseBlock<T>& dense() const { return dense_; }
  const NystromAttention<T>& attention() const { return attn_; }

 private:
  int out_;
  Conv2d<T> proj_;
  DenseBlock<T> dense_;
  NystromAttention<T> attn_;
  BatchNorm2d<T> blend_norm_;
  Conv2d<T> blend_;
};

/// Plain convolutional conditioner: 3x3 conv, ReLU, 1x1 conv, ReLU, zero-init
/// 3x3 conv.
template <typename T>
class GlowCouplingNet final : public CouplingNet<T> {
 public:
  GlowCouplingNet(int in_channels, int out_channels, int hidden, Rng& rng);

  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& x) const override;
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;

 private:
  int out_;
  Conv2d<T> a_, b_, c_;
};

}  // namespace denseflow

#endif  // DENSEFLOW_COUPLING_HPP
