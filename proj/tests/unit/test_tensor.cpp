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

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include "denseflow/ops.hpp"
#include "denseflow/random.hpp"

using namespace denseflow;
using TD = Tensor<double>;

namespace {

std::vector<double> values(const TD& t) { return {t.data().begin(), t.data().end()}; }

TD randn(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return normal_tensor<double>(s, rng, scale);
}

}  // namespace

TEST_CASE("elementwise identities") {
  TD zeros(Shape{2, 3});
  const auto e = ops::exp(zeros);
  const auto s = ops::sigmoid(zeros);
  for (double v : e.data()) CHECK(v == 1.0);
  for (double v : s.data()) CHECK(v == 0.5);
}

TEST_CASE("softplus matches a long-double oracle at -20, 0, 20") {
  TD x(Shape{3}, {-20.0, 0.0, 20.0});
  auto y = ops::softplus(x);
  for (int i = 0; i < 3; ++i) {
    const double ref = static_cast<double>(oracle::softplus(static_cast<long double>(x[i])));
    CHECK(oracle::rel_diff(y[i], ref) < 1e-12);
  }
}

TEST_CASE("domain violations raise instead of poisoning") {
  TD x(Shape{2}, {1.0, 0.0});
  CHECK_THROWS_AS(ops::log(x), NumericDomainError);
  CHECK_THROWS_WITH_AS(ops::div(TD(Shape{2}, 1.0), x), doctest::Contains("div"), NumericDomainError);
  CHECK_THROWS_AS(ops::sqrt(TD(Shape{1}, -1.0)), NumericDomainError);
}

TEST_CASE("broadcasting") {
  auto a = randn({2, 3, 1, 4}, 1);
  auto b = randn({3, 5, 1}, 2);
  auto c = randn({4}, 3);
  auto s = ops::add(a, b);
  CHECK(s.shape() == Shape{2, 3, 5, 4});
  CHECK((a + b + c).shape() == (a + (b + c)).shape());
  CHECK(s[0] == doctest::Approx(a[0] + b[0]));
  CHECK_THROWS_AS(ops::add(randn({2, 3}, 1), randn({4, 3}, 1)), ShapeError);
}

TEST_CASE("matmul") {
  auto a = randn({4, 4}, 11);
  CHECK(ops::max_abs_diff(ops::matmul(ops::eye<double>(4), a), a) == 0.0);

  TD s(Shape{1, 1}, {3.0});
  TD t(Shape{1, 1}, {-2.5});
  CHECK(ops::matmul(s, t).item() == -7.5);

  auto x = randn({5, 3}, 12);
  auto y = randn({3, 7}, 13);
  auto ref = oracle::matmul(values(x), values(y), 5, 3, 7);
  CHECK(oracle::relative_error(values(ops::matmul(x, y)), ref) < 1e-6);

  CHECK_THROWS_WITH_AS(ops::matmul(x, randn({4, 2}, 1)), doctest::Contains("[5x3]"), ShapeError);
}

TEST_CASE("conv2d") {
  SUBCASE("identity 1x1 kernel") {
    auto x = randn({2, 3, 4, 5}, 21);
    TD k(Shape{3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) k.mutable_data()[c * 3 + c] = 1.0;
    CHECK(ops::max_abs_diff(ops::conv2d(x, k, TD{}, 0), x) == 0.0);
  }
  SUBCASE("constant input, all-ones 3x3 kernel") {
    const double v = 0.75;
    TD x(Shape{1, 2, 5, 5}, v);
    TD k(Shape{1, 2, 3, 3}, 1.0);
    auto y = ops::conv2d(x, k, TD{}, 1);
    for (int i = 1; i < 4; ++i)
      for (int j = 1; j < 4; ++j) CHECK(y[i * 5 + j] == doctest::Approx(9 * 2 * v));
  }
  SUBCASE("random against direct loops") {
    auto x = randn({2, 3, 6, 6}, 22);
    auto k = randn({4, 3, 3, 3}, 23);
    auto ref = oracle::conv2d(values(x), 2, 3, 6, 6, values(k), 4, 3, 3, 1);
    CHECK(oracle::relative_error(values(ops::conv2d(x, k, TD{}, 1)), ref) < 1e-5);
    auto ref0 = oracle::conv2d(values(x), 2, 3, 6, 6, values(k), 4, 3, 3, 0);
    CHECK(oracle::relative_error(values(ops::conv2d(x, k, TD{}, 0)), ref0) < 1e-5);
  }
  SUBCASE("non-positive output extent") {
    CHECK_THROWS_AS(ops::conv2d(randn({1, 1, 2, 2}, 1), randn({1, 1, 3, 3}, 1), TD{}, 0), ShapeError);
  }
}

TEST_CASE("softmax_last") {
  TD c(Shape{2, 5}, 0.3);
  const auto uniform = ops::softmax_last(c);
  for (double v : uniform.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

  TD d(Shape{1, 4}, {0.0, 50.0, 0.0, 0.0});
  CHECK(ops::softmax_last(d)[1] >= 1.0 - 1e-15);

  auto x = randn({3, 6}, 31, 2.0);
  auto y = ops::softmax_last(x);
  for (int r = 0; r < 3; ++r) {
    double total = 0.0, row_sum = 0.0;
    for (int j = 0; j < 6; ++j) total += std::exp(x[r * 6 + j]);
    for (int j = 0; j < 6; ++j) {
      CHECK(std::abs(y[r * 6 + j] - std::exp(x[r * 6 + j]) / total) < 1e-10);
      CHECK(y[r * 6 + j] > 0.0);
      row_sum += y[r * 6 + j];
    }
    CHECK(std::abs(row_sum - 1.0) < 1e-6);
  }
}

TEST_CASE("shape suite") {
  auto x = randn({2, 3, 4, 4}, 41);
  auto sq = ops::space_to_channel(x);
  CHECK(sq.shape() == Shape{2, 12, 2, 2});
  CHECK(ops::max_abs_diff(ops::channel_to_space(sq), x) == 0.0);

  auto a = randn({2, 3, 2, 2}, 42);
  auto b = randn({2, 5, 2, 2}, 43);
  auto cat = ops::concat<double>({a, b}, 1);
  CHECK(ops::max_abs_diff(ops::slice(cat, 1, 0, 3), a) == 0.0);
  CHECK(ops::max_abs_diff(ops::slice(cat, 1, 3, 5), b) == 0.0);

  // [[a, b], [c, d]] -> channels (a, b, c, d)
  TD cell(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(values(ops::space_to_channel(cell)) == std::vector<double>{1.0, 2.0, 3.0, 4.0});

  CHECK_THROWS_AS(ops::space_to_channel(randn({1, 1, 3, 4}, 1)), ShapeError);

  auto sorted_vals = [](const TD& t) {
    auto v = values(t);
    std::sort(v.begin(), v.end());
    return v;
  };
  CHECK(sorted_vals(sq) == sorted_vals(x));
  CHECK(sorted_vals(ops::permute(x, {0, 2, 3, 1})) == sorted_vals(x));
}

TEST_CASE("backward basics") {
  TD x(Shape{1}, {3.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto loss = ops::sum(ops::square(x));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  TD v(Shape{3}, 1.0);
  v.set_requires_grad(true);
  Tape<double> tape3;
  TapeScope<double> scope3(tape3);
  CHECK_THROWS_AS(tape3.backward(ops::square(v)), ContractError);
}

TEST_CASE("unreachable and detached leaves get zero gradient") {
  TD used(Shape{2}, {1.0, 2.0});
  TD unused(Shape{2}, {1.0, 2.0});
  ParameterRegistry<double> reg;
  reg.add("used", used);
  reg.add("unused", unused);
  CHECK_THROWS_AS(reg.add("used", used), ContractError);
  reg.zero_grad();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto d = used.detach();
    auto loss = ops::sum(used * used + d * d);
    tape.backward(loss);
    CHECK(!d.has_grad());
  }
  CHECK(used.grad()[1] == doctest::Approx(4.0));
  CHECK(unused.grad()[0] == 0.0);
  CHECK(unused.grad()[1] == 0.0);
}

TEST_CASE("conv2d gradient matches central differences") {
  auto x = randn({2, 3, 5, 5}, 51);
  auto k = randn({4, 3, 3, 3}, 52);
  auto bias = randn({4}, 53);
  auto res = gradcheck::run(
      [](const std::vector<TD>& in) { return ops::sum(ops::conv2d(in[0], in[1], in[2], 1)); },
      {x, k, bias}, 1e-4);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("finite-difference agreement for every differentiable op") {
  // A weighted sum keeps every output coordinate in play.
  auto w = randn({2, 3, 4}, 60);
  auto wsum = [w](const TD& t) { return ops::sum(ops::mul(t, w)); };
  auto a = randn({2, 3, 4}, 61);
  auto b = randn({2, 3, 4}, 62);
  auto pos = ops::add_scalar(ops::abs(randn({2, 3, 4}, 63)), 0.5);
  auto row = randn({1, 3, 1}, 64);

  using Fn = std::function<TD(const std::vector<TD>&)>;
  std::vector<std::pair<const char*, std::pair<Fn, std::vector<TD>>>> cases = {
      {"add_bcast", {[&](auto& in) { return wsum(ops::add(in[0], in[1])); }, {a, row}}},
      {"sub", {[&](auto& in) { return wsum(ops::sub(in[0], in[1])); }, {a, b}}},
      {"mul_bcast", {[&](auto& in) { return wsum(ops::mul(in[0], in[1])); }, {a, row}}},
      {"div", {[&](auto& in) { return wsum(ops::div(in[0], in[1])); }, {a, pos}}},
      {"exp", {[&](auto& in) { return wsum(ops::exp(in[0])); }, {a}}},
      {"log", {[&](auto& in) { return wsum(ops::log(in[0])); }, {pos}}},
      {"sigmoid", {[&](auto& in) { return wsum(ops::sigmoid(in[0])); }, {a}}},
      {"log_sigmoid", {[&](auto& in) { return wsum(ops::log_sigmoid(in[0])); }, {a}}},
      {"softplus", {[&](auto& in) { return wsum(ops::softplus(in[0])); }, {a}}},
      {"tanh", {[&](auto& in) { return wsum(ops::tanh(in[0])); }, {a}}},
      {"relu", {[&](auto& in) { return wsum(ops::relu(in[0])); }, {a}}},
      {"sqrt", {[&](auto& in) { return wsum(ops::sqrt(in[0])); }, {pos}}},
      {"clamp", {[&](auto& in) { return wsum(ops::clamp(in[0], -0.5, 0.5)); }, {a}}},
      {"softmax", {[&](auto& in) { return wsum(ops::softmax_last(in[0])); }, {a}}},
      {"sum_axes", {[&](auto& in) { return ops::sum(ops::square(ops::sum_axes(in[0], {0, 2}, true))); }, {a}}},
      {"max_last", {[&](auto& in) { return ops::sum(ops::square(ops::max_last(in[0], false))); }, {a}}},
      {"matmul3", {[&](auto& in) { return ops::sum(ops::square(ops::matmul(in[0], in[1]))); },
                   {randn({2, 3, 4}, 65), randn({2, 4, 5}, 66)}}},
      {"matmul_bcast", {[&](auto& in) { return ops::sum(ops::square(ops::matmul(in[0], in[1]))); },
                        {randn({3, 4}, 67), randn({2, 4, 5}, 68)}}},
      {"permute", {[&](auto& in) { return wsum(ops::transpose_last2(ops::transpose_last2(in[0]))); }, {a}}},
      {"squeeze", {[&](auto& in) {
                     return ops::sum(ops::square(ops::space_to_channel(in[0])) * ops::space_to_channel(in[1]));
                   },
                   {randn({1, 2, 4, 4}, 69), randn({1, 2, 4, 4}, 70)}}},
      {"unsqueeze", {[&](auto& in) { return ops::sum(ops::square(ops::channel_to_space(in[0])) * in[1]); },
                     {randn({1, 8, 2, 2}, 71), randn({1, 2, 4, 4}, 72)}}},
      {"concat_slice", {[&](auto& in) {
                          auto c = ops::concat<double>({in[0], in[1]}, 1);
                          return ops::sum(ops::square(ops::slice(c, 1, 1, 3)));
                        },
                        {randn({2, 2, 3}, 73), randn({2, 4, 3}, 74)}}},
  };
  for (auto& [name, spec] : cases) {
    CAPTURE(name);
    auto res = gradcheck::run(spec.first, spec.second, 1e-6);
    CHECK(res.checked > 0);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("rng state round-trips") {
  Rng a(123);
  a.normal();
  Rng b(0);
  b.restore(a.state());
  CHECK(a.uniform() == b.uniform());
  CHECK(a.normal() == b.normal());
}
