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

#ifndef DENSEFLOW_RANDOM_HPP
#define DENSEFLOW_RANDOM_HPP

#include <cstdint>
#include <random>
#include <string>

#include "denseflow/tensor.hpp"

namespace denseflow {

/// mt19937_64 with explicit, cache-free transforms to uniform and normal
/// variates, so the full generator state is the engine state and serialises
/// as text.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();  // [0, 1)
  double normal();   // Box-Muller, one variate per call
  std::uint64_t below(std::uint64_t bound);

  // Independent generator keyed by (one draw of this stream, key).
  Rng fork(std::uint64_t key);

  std::string state() const;
  void restore(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, Rng& rng, T stddev = T(1));

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, T lo = T(0), T hi = T(1));

}  // namespace denseflow

#endif  // DENSEFLOW_RANDOM_HPP
