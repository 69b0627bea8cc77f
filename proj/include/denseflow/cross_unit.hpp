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

#ifndef DENSEFLOW_CROSS_UNIT_HPP
#define DENSEFLOW_CROSS_UNIT_HPP

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "denseflow/nn.hpp"
#include "denseflow/noise.hpp"

namespace denseflow {

enum class NoiseMode { learned, white };
enum class ContextMode { inclusive, strict };

template <typename T>
struct Augmented {
  Tensor<T> z_aug;
  Tensor<T> log_sigma_sum;  // [b]
  Tensor<T> noise_penalty;  // [b], -ln N(e; 0, I)
  Tensor<T> mu, sigma, e;
};

/// Appends k channels sigma * e + mu with (mu, sigma) predicted from a context
/// of earlier unit outputs. White mode fixes mu = 0 and sigma = 1.
template <typename T>
class CrossUnitCoupling final : public Module<T> {
 public:
  CrossUnitCoupling(int growth, int context_channels, int hidden, NoiseMode mode, Rng& rng);

  Augmented<T> augment(const Tensor<T>& z, const std::vector<Tensor<T>>& context, NoiseSource<T>& noise) const;
  static Tensor<T> strip(const Tensor<T>& z_aug, int growth);

  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;
  int growth() const { return k_; }
  int context_channels() const { return ctx_; }
  NoiseMode mode() const { return mode_; }
  std::uint64_t conditioner_calls() const { return calls_.load(); }

 private:
  int k_;
  int ctx_;
  NoiseMode mode_;
  Conv2d<T> in_, out_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

}  // namespace denseflow

#endif  // DENSEFLOW_CROSS_UNIT_HPP
