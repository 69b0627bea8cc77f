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

#ifndef DENSEFLOW_TOY_HPP
#define DENSEFLOW_TOY_HPP

#include <cstdint>
#include <memory>

#include "denseflow/bijections.hpp"
#include "denseflow/cross_unit.hpp"
#include "denseflow/flow_model.hpp"

namespace denseflow {

/// Scalar data z followed by one cross-unit augmentation and a standard normal
/// prior over (z, noise), with the identity flow in between. Integrating the
/// noise out leaves exactly ln N(z; 0, 1).
template <typename T>
class AugmentationToy {
 public:
  // `spread` > 0 randomises the conditioner so that mu and sigma depend on z;
  // 0 keeps the zero-initialised output layer.
  AugmentationToy(int growth, NoiseMode mode, std::uint64_t seed, double spread);

  /// z: [b, 1, 1, 1].
  BoundResult<T> bound(const Tensor<T>& z, NoiseSource<T>& noise) const;
  static double exact(double z);
  // Maps pixels 0..255 to z = (p - 127.5) / 64.
  static Tensor<T> from_pixels(const Tensor<T>& pixels);
  const CrossUnitCoupling<T>& coupling() const { return *cu_; }

 private:
  std::unique_ptr<CrossUnitCoupling<T>> cu_;
};

}  // namespace denseflow

#endif  // DENSEFLOW_TOY_HPP
