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

#ifndef DENSEFLOW_NOISE_HPP
#define DENSEFLOW_NOISE_HPP

#include <cstddef>
#include <vector>

#include "denseflow/errors.hpp"
#include "denseflow/random.hpp"
#include "denseflow/tensor.hpp"

namespace denseflow {

/// Supplier of the random tensors consumed by a flow evaluation.
template <typename T>
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual Tensor<T> normal(const Shape& shape) = 0;
  virtual Tensor<T> uniform(const Shape& shape) = 0;  // [0, 1)
};

template <typename T>
class RngNoise final : public NoiseSource<T> {
 public:
  explicit RngNoise(Rng& rng) : rng_(rng) {}
  Tensor<T> normal(const Shape& shape) override { return normal_tensor<T>(shape, rng_); }
  Tensor<T> uniform(const Shape& shape) override { return uniform_tensor<T>(shape, rng_); }

 private:
  Rng& rng_;
};

/// Forwards to another source and keeps a copy of every draw in order.
template <typename T>
class RecordingNoise final : public NoiseSource<T> {
 public:
  explicit RecordingNoise(NoiseSource<T>& inner) : inner_(inner) {}
  Tensor<T> normal(const Shape& shape) override { return keep(inner_.normal(shape)); }
  Tensor<T> uniform(const Shape& shape) override { return keep(inner_.uniform(shape)); }
  const std::vector<Tensor<T>>& draws() const { return draws_; }

 private:
  Tensor<T> keep(Tensor<T> t) {
    draws_.push_back(t.clone());
    return t;
  }
  NoiseSource<T>& inner_;
  std::vector<Tensor<T>> draws_;
};

/// Returns a fixed list of draws in order, whatever the requested kind.
template <typename T>
class ReplayNoise final : public NoiseSource<T> {
 public:
  explicit ReplayNoise(std::vector<Tensor<T>> draws) : draws_(std::move(draws)) {}
  Tensor<T> normal(const Shape& shape) override { return next(shape); }
  Tensor<T> uniform(const Shape& shape) override { return next(shape); }
  std::size_t remaining() const { return draws_.size() - pos_; }

 private:
  Tensor<T> next(const Shape& shape) {
    if (pos_ >= draws_.size()) throw ContractError("replay noise: exhausted");
    const auto& t = draws_[pos_++];
    if (t.shape() != shape) {
      throw ShapeError("replay noise: expected " + shape_str(shape) + ", recorded " + shape_str(t.shape()));
    }
    return t.clone();
  }
  std::vector<Tensor<T>> draws_;
  std::size_t pos_ = 0;
};

/// All-zero draws, used for mode-seeking decodes and tests.
template <typename T>
class ZeroNoise final : public NoiseSource<T> {
 public:
  Tensor<T> normal(const Shape& shape) override { return Tensor<T>(shape, T(0)); }
  Tensor<T> uniform(const Shape& shape) override { return Tensor<T>(shape, T(0)); }
};

}  // namespace denseflow

#endif  // DENSEFLOW_NOISE_HPP
