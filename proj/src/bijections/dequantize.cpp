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

#include <cmath>
#include <numbers>

#include "denseflow/bijections.hpp"
#include "denseflow/ops.hpp"

namespace denseflow {

template <typename T>
Dequantizer<T>::Dequantizer(int channels, DequantMode mode, int hidden, Rng& rng)
    : c_(channels), mode_(mode) {
  if (channels < 1) throw ConfigError("dequantizer: channels must be positive");
  if (mode_ != DequantMode::variational) return;
  if (hidden < 1) throw ConfigError("dequantizer: hidden width must be positive");
  const int c1 = (channels + 1) / 2;
  // Two layers with complementary halves; a single channel is transformed
  // twice, conditioned on the pixels alone.
  const int spans[2][4] = {{c1, channels - c1, 0, c1}, {0, c1, c1, channels - c1}};
  for (const auto& sp : spans) {
    Layer l{sp[0], sp[1], sp[2], sp[3], {}, {}};
    if (l.trans_count == 0) l = Layer{0, channels, 0, 0, {}, {}};
    l.in = Conv2d<T>(channels + l.cond_count, hidden, 3, rng);
    l.out = Conv2d<T>(hidden, 2 * l.trans_count, 3, rng, Init::zero);
    layers_.push_back(std::move(l));
  }
}

template <typename T>
DequantResult<T> Dequantizer<T>::forward(const Tensor<T>& pixels, NoiseSource<T>& noise) const {
  if (pixels.rank() != 4 || pixels.dim(1) != c_) {
    throw ShapeError("dequantizer: expected " + std::to_string(c_) + " channels, got " +
                     shape_str(pixels.shape()));
  }
  for (T v : pixels.data()) {
    if (!(v >= T(0) && v <= T(255)) || v != std::floor(v)) {
      throw DataError("dequantizer: pixel value out of range 0..255");
    }
  }
  const std::int64_t b = pixels.dim(0);
  const T d = static_cast<T>(pixels.numel() / b);
  DequantResult<T> out;
  out.correction = Tensor<T>(Shape{b}, static_cast<T>(-d * std::log(256.0)));
  if (mode_ == DequantMode::uniform) {
    auto u = noise.uniform(pixels.shape());
    out.x = ops::mul_scalar(ops::add(pixels, u), T(1) / T(256));
    out.penalty = Tensor<T>(Shape{b});
    return out;
  }
  const auto eps = noise.normal(pixels.shape());
  const auto feat = ops::add_scalar(ops::mul_scalar(pixels, T(1) / T(127.5)), T(-1));
  Tensor<T> v = eps;
  Tensor<T> flow_logdet(Shape{b});
  for (const auto& l : layers_) {
    auto cond = l.cond_count > 0 ? ops::concat<T>({feat, ops::slice(v, 1, l.cond_start, l.cond_count)}, 1) : feat;
    auto o = l.out(ops::relu(l.in(cond)));
    auto log_s = ops::tanh(ops::slice(o, 1, 0, l.trans_count));
    auto t = ops::slice(o, 1, l.trans_count, l.trans_count);
    auto moved = ops::add(ops::mul(ops::slice(v, 1, l.trans_start, l.trans_count), ops::exp(log_s)), t);
    std::vector<Tensor<T>> parts;
    if (l.trans_start > 0) parts.push_back(ops::slice(v, 1, 0, l.trans_start));
    parts.push_back(moved);
    const int tail = c_ - l.trans_start - l.trans_count;
    if (tail > 0) parts.push_back(ops::slice(v, 1, l.trans_start + l.trans_count, tail));
    v = parts.size() == 1 ? moved : ops::concat(parts, 1);
    flow_logdet = ops::add(flow_logdet, ops::sum_per_example(log_s));
  }
  const T half_log_2pi = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi));
  auto log_noise = ops::sum_per_example(ops::add_scalar(ops::mul_scalar(ops::square(eps), T(-0.5)), -half_log_2pi));
  auto log_jac = ops::sum_per_example(ops::add(ops::log_sigmoid(v), ops::log_sigmoid(ops::neg(v))));
  out.penalty = ops::sub(ops::sub(log_noise, flow_logdet), log_jac);
  out.x = ops::mul_scalar(ops::add(pixels, ops::sigmoid(v)), T(1) / T(256));
  return out;
}

template <typename T>
Tensor<T> Dequantizer<T>::quantize(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T v = std::floor(in[i] * T(256));
    o[i] = std::isnan(v) ? T(0) : std::clamp(v, T(0), T(255));
  }
  return out;
}

template <typename T>
void Dequantizer<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    layers_[i].in.collect(p + ".in", registry);
    layers_[i].out.collect(p + ".out", registry);
  }
}

template class Dequantizer<float>;
template class Dequantizer<double>;

}  // namespace denseflow
