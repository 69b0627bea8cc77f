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

#ifndef DENSEFLOW_TESTS_FIXTURES_HPP
#define DENSEFLOW_TESTS_FIXTURES_HPP

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "denseflow/bijections.hpp"
#include "denseflow/ops.hpp"
#include "denseflow/random.hpp"
#include "support/oracles.hpp"

namespace fixtures {

using denseflow::Shape;
using denseflow::Tensor;

template <typename T>
std::vector<double> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename T>
Tensor<T> randn(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  denseflow::Rng rng(seed);
  return denseflow::normal_tensor<T>(s, rng, static_cast<T>(scale));
}

// Single random 3x3 conv emitting (s_raw, t).
template <typename T>
class ConvNet final : public denseflow::CouplingNet<T> {
 public:
  ConvNet(int in, int out, std::uint64_t seed) : out_(out) {
    denseflow::Rng rng(seed);
    conv_ = denseflow::Conv2d<T>(in, 2 * out, 3, rng);
  }
  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& x) const override {
    auto o = conv_(x);
    return {denseflow::ops::slice(o, 1, 0, out_), denseflow::ops::slice(o, 1, out_, out_)};
  }
  void collect(const std::string& prefix, denseflow::ParameterRegistry<T>& r) const override {
    conv_.collect(prefix + ".conv", r);
  }

 private:
  int out_;
  denseflow::Conv2d<T> conv_;
};

// Constant (s_raw, t) whatever the input.
template <typename T>
class ConstNet final : public denseflow::CouplingNet<T> {
 public:
  ConstNet(int out, T raw, T shift) : out_(out), raw_(raw), shift_(shift) {}
  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& x) const override {
    Shape s = x.shape();
    s[1] = out_;
    return {Tensor<T>(s, raw_), Tensor<T>(s, shift_)};
  }
  void collect(const std::string&, denseflow::ParameterRegistry<T>&) const override {}

 private:
  int out_;
  T raw_;
  T shift_;
};

// ln|det J| of the bijection's forward map at x, by finite differences.
inline double numeric_logdet(denseflow::Bijection<double>& b, const Tensor<double>& x, double eps = 1e-6) {
  const Shape shape = x.shape();
  auto f = [&](const std::vector<double>& v) {
    return values(b.forward(Tensor<double>(shape, v)).y);
  };
  const auto xv = values(x);
  return oracle::log_abs_det(oracle::jacobian(f, xv, eps), xv.size());
}

// Overwrites every registered tensor whose name ends with `suffix`.
template <typename T>
void fill_params(const denseflow::Module<T>& m, const std::string& suffix, std::uint64_t seed, double scale) {
  denseflow::ParameterRegistry<T> reg;
  m.collect("m", reg);
  denseflow::Rng rng(seed);
  for (const auto& e : reg.entries()) {
    if (e.name.size() < suffix.size() || e.name.compare(e.name.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    Tensor<T> t = e.tensor;
    for (auto& v : t.mutable_data()) v = static_cast<T>(scale * rng.normal());
  }
}

}  // namespace fixtures

#endif  // DENSEFLOW_TESTS_FIXTURES_HPP
