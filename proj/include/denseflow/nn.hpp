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

#ifndef DENSEFLOW_NN_HPP
#define DENSEFLOW_NN_HPP

#include <string>

#include "denseflow/random.hpp"
#include "denseflow/tensor.hpp"

namespace denseflow {

template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  // Registers every persistent tensor under `prefix`.
  virtual void collect(const std::string& prefix, ParameterRegistry<T>& registry) const = 0;
  virtual void set_training(bool training) { (void)training; }
};

enum class Init { standard, zero };

/// Convolution with odd square kernel and "same" padding.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  // Standard init draws U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
  Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, Init init = Init::standard);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const;

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  std::int64_t parameter_count() const { return weight_.numel() + bias_.numel(); }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  int in_ = 0;
  int out_ = 0;
  int pad_ = 0;
};

/// Per-channel batch normalisation. Training mode normalises with batch
/// statistics (batch >= 2) and updates running estimates; evaluation mode
/// uses the frozen running estimates.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, T momentum = T(0.1), T eps = T(1e-5));

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const;
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  std::int64_t parameter_count() const { return gamma_.numel() + beta_.numel(); }

 private:
  Tensor<T> gamma_;
  Tensor<T> beta_;
  Tensor<T> running_mean_;  // buffers, written during training-mode calls
  Tensor<T> running_var_;
  T momentum_ = T(0.1);
  T eps_ = T(1e-5);
  bool training_ = true;
};

}  // namespace denseflow

#endif  // DENSEFLOW_NN_HPP
