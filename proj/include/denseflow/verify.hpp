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

#ifndef DENSEFLOW_VERIFY_HPP
#define DENSEFLOW_VERIFY_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "denseflow/bijections.hpp"

namespace denseflow {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  int trials = 100;  // random inputs per invertibility check
  std::uint64_t seed = 0;
};

/// Property suite: round trips, Jacobian log-determinants, gradient checks,
/// attention fidelity, the augmentation bound toy and format round trips.
std::vector<CheckResult> run_verify_suite(const VerifyOptions& opts,
                                          const std::function<void(const CheckResult&)>& on_result = {});

namespace numeric {

/// ln|det A| of a row-major n x n matrix by partial-pivot LU.
double log_abs_det(std::vector<double> a, std::size_t n);

/// Central-difference ln|det J| of the bijection's forward map at x.
double logdet_fd(Bijection<double>& b, const Tensor<double>& x, double eps = 1e-6);

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
};

/// Autodiff gradients of `loss` against central differences on `coords`
/// random coordinates per leaf. Coordinates where both are below `floor` in
/// magnitude are skipped.
GradCheck grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& loss,
                     std::vector<Tensor<double>> leaves, int coords, std::uint64_t seed, double eps = 1e-5,
                     double floor = 1e-6);

}  // namespace numeric

}  // namespace denseflow

#endif  // DENSEFLOW_VERIFY_HPP
