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

#include "denseflow/cross_unit.hpp"

#include <cmath>
#include <numbers>

#include "denseflow/ops.hpp"

namespace denseflow {

template <typename T>
CrossUnitCoupling<T>::CrossUnitCoupling(int growth, int context_channels, int hidden, NoiseMode mode, Rng& rng)
    : k_(growth), ctx_(context_channels), mode_(mode) {
  if (growth < 0) throw ConfigError("cross-unit: negative growth rate");
  if (mode == NoiseMode::learned && growth > 0) {
    if (context_channels < 1 || hidden < 1) throw ConfigError("cross-unit: empty conditioner");
    in_ = Conv2d<T>(context_channels, hidden, 1, rng);
    out_ = Conv2d<T>(hidden, 2 * growth, 3, rng, Init::zero);
  }
}

template <typename T>
Augmented<T> CrossUnitCoupling<T>::augment(const Tensor<T>& z, const std::vector<Tensor<T>>& context,
                                           NoiseSource<T>& noise) const {
  if (z.rank() != 4) throw ShapeError("cross-unit: expected NCHW input");
  const auto b = z.dim(0), h = z.dim(2), w = z.dim(3);
  for (const auto& c : context) {
    if (c.rank() != 4 || c.dim(0) != b || c.dim(2) != h || c.dim(3) != w) {
      throw ShapeError("cross-unit: context does not match the augmented tensor");
    }
  }
  Augmented<T> out;
  if (k_ == 0) {
    out.z_aug = z;
    out.log_sigma_sum = Tensor<T>(Shape{b});
    out.noise_penalty = Tensor<T>(Shape{b});
    return out;
  }
  const Shape ns{b, k_, h, w};
  out.e = noise.normal(ns);
  if (mode_ == NoiseMode::white) {
    out.mu = Tensor<T>(ns);
    out.sigma = Tensor<T>(ns, T(1));
    out.log_sigma_sum = Tensor<T>(Shape{b});
  } else {
    auto ctx = context.size() == 1 ? context.front() : ops::concat(context, 1);
    if (ctx.dim(1) != ctx_) throw ShapeError("cross-unit: context channel count differs from construction");
    ++calls_;
    auto raw = out_(ops::relu(in_(ctx)));
    out.mu = ops::slice(raw, 1, 0, k_);
    out.sigma = ops::add_scalar(ops::softplus(ops::slice(raw, 1, k_, k_)), T(1e-4));
    out.log_sigma_sum = ops::sum_per_example(ops::log(out.sigma));
  }
  out.z_aug = ops::concat<T>({z, ops::add(ops::mul(out.sigma, out.e), out.mu)}, 1);
  const T log_norm = static_cast<T>(0.5 * static_cast<double>(k_ * h * w) * std::log(2.0 * std::numbers::pi));
  out.noise_penalty = ops::add_scalar(ops::mul_scalar(ops::sum_per_example(ops::square(out.e)), T(0.5)), log_norm);
  return out;
}

template <typename T>
Tensor<T> CrossUnitCoupling<T>::strip(const Tensor<T>& z_aug, int growth) {
  if (z_aug.rank() != 4 || growth < 0 || growth > z_aug.dim(1)) {
    throw ShapeError("cross-unit: cannot strip " + std::to_string(growth) + " channels");
  }
  if (growth == 0) return z_aug;
  return ops::slice(z_aug, 1, 0, z_aug.dim(1) - growth);
}

template <typename T>
void CrossUnitCoupling<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  if (mode_ == NoiseMode::white || k_ == 0) return;
  in_.collect(prefix + ".in", registry);
  out_.collect(prefix + ".out", registry);
}

template class CrossUnitCoupling<float>;
template class CrossUnitCoupling<double>;

}  // namespace denseflow
