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

// Autodiff-vs-central-difference harness. The forward function is evaluated
// without a tape for the differences, so the reference never touches the
// backward code it checks.

#ifndef DENSEFLOW_TESTS_GRADCHECK_HPP
#define DENSEFLOW_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "denseflow/random.hpp"
#include "denseflow/tensor.hpp"

namespace gradcheck {

using denseflow::Tensor;

struct Result {
  double max_rel_error = 0.0;
  int checked = 0;
};

// `loss` maps the leaves to a scalar. Every coordinate with |g| > floor is
// compared, or `max_coords` randomly chosen ones per leaf when positive.
inline Result run(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& loss,
                  std::vector<Tensor<double>> leaves, double eps = 1e-5, int max_coords = 0,
                  std::uint64_t seed = 7, double floor = 1e-6) {
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    denseflow::Tape<double> tape;
    denseflow::TapeScope<double> scope(tape);
    auto l = loss(leaves);
    tape.backward(l);
  }
  denseflow::Rng rng(seed);
  Result res;
  for (auto& leaf : leaves) {
    std::vector<std::int64_t> coords;
    if (max_coords > 0) {
      for (int i = 0; i < max_coords; ++i) {
        coords.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(leaf.numel()))));
      }
    } else {
      for (std::int64_t i = 0; i < leaf.numel(); ++i) coords.push_back(i);
    }
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    for (auto i : coords) {
      auto data = leaf.mutable_data();
      const double x0 = data[static_cast<std::size_t>(i)];
      data[static_cast<std::size_t>(i)] = x0 + eps;
      const double fp = loss(leaves).item();
      data[static_cast<std::size_t>(i)] = x0 - eps;
      const double fm = loss(leaves).item();
      data[static_cast<std::size_t>(i)] = x0;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double g = analytic[static_cast<std::size_t>(i)];
      if (std::abs(g) <= floor && std::abs(numeric) <= floor) continue;
      const double rel = std::abs(g - numeric) / std::max({std::abs(g), std::abs(numeric), 1e-12});
      res.max_rel_error = std::max(res.max_rel_error, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace gradcheck

#endif  // DENSEFLOW_TESTS_GRADCHECK_HPP
