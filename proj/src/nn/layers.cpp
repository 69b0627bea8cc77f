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

#include "denseflow/nn.hpp"
#include "denseflow/ops.hpp"

namespace denseflow {

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, Init init)
    : weight_(Shape{out_channels, in_channels, kernel, kernel}),
      bias_(Shape{out_channels}),
      in_(in_channels),
      out_(out_channels),
      pad_(kernel / 2) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("conv2d: invalid geometry " + std::to_string(in_channels) + "->" +
                      std::to_string(out_channels) + " k=" + std::to_string(kernel));
  }
  if (init == Init::standard) {
    const T bound = T(1) / std::sqrt(static_cast<T>(in_channels * kernel * kernel));
    for (auto& w : weight_.mutable_data()) w = bound * static_cast<T>(2.0 * rng.uniform() - 1.0);
    for (auto& b : bias_.mutable_data()) b = bound * static_cast<T>(2.0 * rng.uniform() - 1.0);
  }
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return ops::conv2d(x, weight_, bias_, pad_);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  registry.add(prefix + ".weight", weight_);
  registry.add(prefix + ".bias", bias_);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, T momentum, T eps)
    : gamma_(Shape{1, channels, 1, 1}, T(1)),
      beta_(Shape{1, channels, 1, 1}, T(0)),
      running_mean_(Shape{1, channels, 1, 1}, T(0)),
      running_var_(Shape{1, channels, 1, 1}, T(1)),
      momentum_(momentum),
      eps_(eps) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != gamma_.dim(1)) {
    throw ShapeError("batchnorm: expected " + std::to_string(gamma_.dim(1)) + " channels, got " +
                     shape_str(x.shape()));
  }
  if (!training_) {
    auto inv_std = ops::sqrt(ops::add_scalar(running_var_.detach(), eps_));
    auto xhat = ops::div(ops::sub(x, running_mean_.detach()), inv_std);
    return ops::add(ops::mul(xhat, gamma_), beta_);
  }
  if (x.dim(0) < 2) throw ContractError("batchnorm: training mode needs a batch of at least 2");
  auto mean = ops::mean_axes(x, {0, 2, 3}, true);
  auto centered = ops::sub(x, mean);
  auto var = ops::mean_axes(ops::square(centered), {0, 2, 3}, true);
  auto xhat = ops::div(centered, ops::sqrt(ops::add_scalar(var, eps_)));
  {
    // Running estimates use the unbiased variance.
    const T n = static_cast<T>(x.dim(0) * x.dim(2) * x.dim(3));
    const T correction = n > T(1) ? n / (n - T(1)) : T(1);
    auto rm = const_cast<Tensor<T>&>(running_mean_).mutable_data();
    auto rv = const_cast<Tensor<T>&>(running_var_).mutable_data();
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = (T(1) - momentum_) * rm[c] + momentum_ * mean[static_cast<std::int64_t>(c)];
      rv[c] = (T(1) - momentum_) * rv[c] + momentum_ * var[static_cast<std::int64_t>(c)] * correction;
    }
  }
  return ops::add(ops::mul(xhat, gamma_), beta_);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  registry.add(prefix + ".gamma", gamma_);
  registry.add(prefix + ".beta", beta_);
  registry.add(prefix + ".running_mean", running_mean_, ParamKind::buffer);
  registry.add(prefix + ".running_var", running_var_, ParamKind::buffer);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;

}  // namespace denseflow
