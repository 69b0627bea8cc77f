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

#include "denseflow/coupling.hpp"

#include <algorithm>
#include <cmath>

#include "denseflow/ops.hpp"

namespace denseflow {

int resolve_landmarks(int requested, std::int64_t seq) {
  if (requested < 0) throw ConfigError("attention: landmark count must be positive");
  const int m = requested == 0 ? static_cast<int>(std::min<std::int64_t>(16, seq)) : requested;
  if (m > seq) {
    throw ConfigError("attention: " + std::to_string(m) + " landmarks exceed sequence length " +
                      std::to_string(seq));
  }
  return m;
}

namespace attention {
namespace {

template <typename T>
Tensor<T> scaled_scores(const Tensor<T>& a, const Tensor<T>& b) {
  const T scale = T(1) / std::sqrt(static_cast<T>(a.dim(-1)));
  return ops::softmax_last(ops::mul_scalar(ops::matmul(a, ops::transpose_last2(b)), scale));
}

}  // namespace

template <typename T>
Tensor<T> segment_means(const Tensor<T>& x, int landmarks) {
  const std::int64_t n = x.dim(1);
  const int m = resolve_landmarks(landmarks, n);
  const std::int64_t size = (n + m - 1) / m;
  const std::int64_t groups = (n + size - 1) / size;
  Tensor<T> avg(Shape{groups, n});
  auto a = avg.mutable_data();
  for (std::int64_t g = 0; g < groups; ++g) {
    const std::int64_t lo = g * size, hi = std::min(n, lo + size);
    for (std::int64_t i = lo; i < hi; ++i) a[static_cast<std::size_t>(g * n + i)] = T(1) / static_cast<T>(hi - lo);
  }
  return ops::matmul(avg, x);
}

template <typename T>
Tensor<T> newton_schulz_pinv(const Tensor<T>& a, int iterations) {
  if (a.rank() != 3 || a.dim(1) != a.dim(2)) throw ShapeError("pinv: expected [b, m, m], got " + shape_str(a.shape()));
  const auto abs_a = ops::abs(a);
  // Z0 = A^T / (||A||_1 ||A||_inf) per matrix.
  auto norm1 = ops::max_last(ops::sum_axes(abs_a, {1}, true), true);
  auto norm_inf = ops::max_last(ops::transpose_last2(ops::sum_axes(abs_a, {2}, true)), true);
  auto z = ops::div(ops::transpose_last2(a), ops::mul(norm1, norm_inf));
  const auto eye = ops::eye<T>(a.dim(1));
  for (int it = 0; it < iterations; ++it) {
    auto kv = ops::matmul(a, z);
    auto inner = ops::sub(ops::mul_scalar(eye, T(7)), kv);
    inner = ops::sub(ops::mul_scalar(eye, T(15)), ops::matmul(kv, inner));
    inner = ops::sub(ops::mul_scalar(eye, T(13)), ops::matmul(kv, inner));
    z = ops::mul_scalar(ops::matmul(z, inner), T(0.25));
  }
  return z;
}

template <typename T>
NystromFactors<T> nystrom_factors(const Tensor<T>& q, const Tensor<T>& k, int landmarks) {
  const auto ql = segment_means(q, landmarks);
  const auto kl = segment_means(k, landmarks);
  return {scaled_scores(q, kl), scaled_scores(ql, kl), scaled_scores(ql, k)};
}

template <typename T>
Tensor<T> nystrom(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int landmarks, int iterations) {
  const auto f = nystrom_factors(q, k, landmarks);
  return ops::matmul(f.left, ops::matmul(newton_schulz_pinv(f.middle, iterations), ops::matmul(f.right, v)));
}

template <typename T>
Tensor<T> exact(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  return ops::matmul(scaled_scores(q, k), v);
}

}  // namespace attention

// ------------------------------------------------------------- DenseBlock

template <typename T>
DenseBlock<T>::DenseBlock(int in_channels, int layers, int growth, Rng& rng, Init conv_init)
    : in_(in_channels), growth_(growth) {
  if (in_channels < 1 || layers < 1 || growth < 1) throw ConfigError("dense block: counts must be positive");
  for (int k = 0; k < layers; ++k) {
    norms_.emplace_back(layer_in_channels(k));
    convs_.emplace_back(layer_in_channels(k), growth, 3, rng, conv_init);
  }
}

template <typename T>
Tensor<T> DenseBlock<T>::operator()(const Tensor<T>& x) const {
  std::vector<Tensor<T>> parts{x};
  Tensor<T> acc = x;
  for (std::size_t k = 0; k < convs_.size(); ++k) {
    parts.push_back(convs_[k](ops::relu(norms_[k](acc))));
    acc = ops::concat(parts, 1);
  }
  return acc;
}

template <typename T>
void DenseBlock<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  for (std::size_t k = 0; k < convs_.size(); ++k) {
    norms_[k].collect(prefix + ".layer" + std::to_string(k) + ".norm", registry);
    convs_[k].collect(prefix + ".layer" + std::to_string(k) + ".conv", registry);
  }
}

template <typename T>
void DenseBlock<T>::set_training(bool training) {
  for (auto& n : norms_) n.set_training(training);
}

// ------------------------------------------------------- NystromAttention

template <typename T>
NystromAttention<T>::NystromAttention(int channels, int height, int width, int landmarks, int heads,
                                      int iterations, Rng& rng)
    : channels_(channels), heads_(heads), iterations_(iterations) {
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("attention: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (iterations < 1) throw ConfigError("attention: Newton-Schulz iterations must be positive");
  landmarks_ = resolve_landmarks(landmarks, static_cast<std::int64_t>(height) * width);
  position_ = normal_tensor<T>(Shape{1, channels, height, width}, rng, T(0.02));
  q_ = Conv2d<T>(channels, channels, 1, rng);
  k_ = Conv2d<T>(channels, channels, 1, rng);
  v_ = Conv2d<T>(channels, channels, 1, rng);
  out_ = Conv2d<T>(channels, channels, 1, rng);
}

template <typename T>
typename NystromAttention<T>::Projected NystromAttention<T>::project(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != channels_ || x.dim(2) != position_.dim(2) || x.dim(3) != position_.dim(3)) {
    throw ShapeError("attention: expected [b, " + std::to_string(channels_) + ", " +
                     std::to_string(position_.dim(2)) + ", " + std::to_string(position_.dim(3)) + "], got " +
                     shape_str(x.shape()));
  }
  const std::int64_t b = x.dim(0), n = x.dim(2) * x.dim(3);
  const auto xp = ops::add(x, position_);
  auto seq = [&](const Tensor<T>& t) { return ops::transpose_last2(ops::reshape(t, Shape{b, channels_, n})); };
  return {seq(q_(xp)), seq(k_(xp)), seq(v_(xp))};
}

template <typename T>
Tensor<T> NystromAttention<T>::attend(const Tensor<T>& x) const {
  const auto [q, k, v] = project(x);
  if (heads_ == 1) return attention::nystrom(q, k, v, landmarks_, iterations_);
  const int dh = channels_ / heads_;
  std::vector<Tensor<T>> outs;
  for (int h = 0; h < heads_; ++h) {
    outs.push_back(attention::nystrom(ops::slice(q, 2, h * dh, dh), ops::slice(k, 2, h * dh, dh),
                                      ops::slice(v, 2, h * dh, dh), landmarks_, iterations_));
  }
  return ops::concat(outs, 2);
}

template <typename T>
Tensor<T> NystromAttention<T>::operator()(const Tensor<T>& x) const {
  const auto a = attend(x);
  return out_(ops::reshape(ops::transpose_last2(a), x.shape()));
}

template <typename T>
void NystromAttention<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  registry.add(prefix + ".position", position_);
  q_.collect(prefix + ".q", registry);
  k_.collect(prefix + ".k", registry);
  v_.collect(prefix + ".v", registry);
  out_.collect(prefix + ".out", registry);
}

// ------------------------------------------------------ FusionCouplingNet

template <typename T>
FusionCouplingNet<T>::FusionCouplingNet(int in_channels, int out_channels, int height, int width,
                                        const CouplingNetConfig& cfg, Rng& rng)
    : out_(out_channels) {
  if (out_channels < 1) throw ConfigError("coupling net: output channels must be positive");
  if (cfg.proj_channels < 1) throw ConfigError("coupling net: proj_channels must be positive");
  proj_ = Conv2d<T>(in_channels, cfg.proj_channels, 1, rng);
  dense_ = DenseBlock<T>(cfg.proj_channels, cfg.dense_layers, cfg.dense_growth, rng);
  attn_ = NystromAttention<T>(cfg.proj_channels, height, width, cfg.attn_landmarks, cfg.attn_heads,
                              cfg.newton_iters, rng);
  blend_norm_ = BatchNorm2d<T>(blend_in_channels());
  blend_ = Conv2d<T>(blend_in_channels(), 2 * out_channels, 3, rng, Init::zero);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> FusionCouplingNet<T>::operator()(const Tensor<T>& x) const {
  const auto p = proj_(x);
  const auto fused = ops::concat<T>({dense_(p), attn_(p)}, 1);
  const auto o = blend_(ops::relu(blend_norm_(fused)));
  return {ops::slice(o, 1, 0, out_), ops::slice(o, 1, out_, out_)};
}

template <typename T>
void FusionCouplingNet<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  proj_.collect(prefix + ".proj", registry);
  dense_.collect(prefix + ".dense", registry);
  attn_.collect(prefix + ".attn", registry);
  blend_norm_.collect(prefix + ".blend_norm", registry);
  blend_.collect(prefix + ".blend", registry);
}

template <typename T>
void FusionCouplingNet<T>::set_training(bool training) {
  dense_.set_training(training);
  blend_norm_.set_training(training);
}

// -------------------------------------------------------- GlowCouplingNet

template <typename T>
GlowCouplingNet<T>::GlowCouplingNet(int in_channels, int out_channels, int hidden, Rng& rng)
    : out_(out_channels),
      a_(in_channels, hidden, 3, rng),
      b_(hidden, hidden, 1, rng),
      c_(hidden, 2 * out_channels, 3, rng, Init::zero) {}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> GlowCouplingNet<T>::operator()(const Tensor<T>& x) const {
  const auto o = c_(ops::relu(b_(ops::relu(a_(x)))));
  return {ops::slice(o, 1, 0, out_), ops::slice(o, 1, out_, out_)};
}

template <typename T>
void GlowCouplingNet<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  a_.collect(prefix + ".in", registry);
  b_.collect(prefix + ".mid", registry);
  c_.collect(prefix + ".out", registry);
}

#define DENSEFLOW_COUPLING_INSTANTIATE(T)                                                        \
  template Tensor<T> attention::segment_means(const Tensor<T>&, int);                           \
  template Tensor<T> attention::newton_schulz_pinv(const Tensor<T>&, int);                      \
  template attention::NystromFactors<T> attention::nystrom_factors(const Tensor<T>&, const Tensor<T>&, int); \
  template Tensor<T> attention::nystrom(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> attention::exact(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template class DenseBlock<T>;                                                                  \
  template class NystromAttention<T>;                                                            \
  template class FusionCouplingNet<T>;                                                           \
  template class GlowCouplingNet<T>;

DENSEFLOW_COUPLING_INSTANTIATE(float)
DENSEFLOW_COUPLING_INSTANTIATE(double)

}  // namespace denseflow
