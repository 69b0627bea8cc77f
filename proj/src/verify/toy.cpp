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

#include "denseflow/toy.hpp"

#include <cmath>
#include <numbers>

#include "denseflow/ops.hpp"

namespace denseflow {

template <typename T>
AugmentationToy<T>::AugmentationToy(int growth, NoiseMode mode, std::uint64_t seed, double spread) {
  Rng rng(seed);
  cu_ = std::make_unique<CrossUnitCoupling<T>>(growth, 1, 6, mode, rng);
  if (spread <= 0.0) return;
  ParameterRegistry<T> reg;
  cu_->collect("toy", reg);
  for (const auto& e : reg.entries()) {
    Tensor<T> t = e.tensor;
    for (auto& v : t.mutable_data()) v = static_cast<T>(spread * rng.normal());
  }
}

template <typename T>
BoundResult<T> AugmentationToy<T>::bound(const Tensor<T>& z, NoiseSource<T>& noise) const {
  if (z.rank() != 4 || z.dim(1) != 1 || z.dim(2) != 1 || z.dim(3) != 1) throw ShapeError("toy: expected [b, 1, 1, 1]");
  const auto b = z.dim(0);
  BoundResult<T> out;
  out.terms = LikelihoodTerms<T>::zeros(b);
  const auto aug = cu_->augment(z, {z}, noise);
  const T half_log_2pi = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi));
  const auto lp = ops::add_scalar(ops::mul_scalar(ops::square(aug.z_aug), T(-0.5)), -half_log_2pi);
  out.terms.prior_logprob = ops::sum_per_example(lp);
  out.terms.logdet_sum = aug.log_sigma_sum;
  out.terms.noise_penalty = aug.noise_penalty;
  out.bound = out.terms.total();
  return out;
}

template <typename T>
double AugmentationToy<T>::exact(double z) {
  return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
}

template <typename T>
Tensor<T> AugmentationToy<T>::from_pixels(const Tensor<T>& pixels) {
  if (pixels.rank() != 4 || pixels.dim(1) * pixels.dim(2) * pixels.dim(3) != 1) {
    throw ShapeError("toy: expected single-value images");
  }
  return ops::mul_scalar(ops::add_scalar(pixels, T(-127.5)), T(1.0 / 64.0));
}

template class AugmentationToy<float>;
template class AugmentationToy<double>;

}  // namespace denseflow
