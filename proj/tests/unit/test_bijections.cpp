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

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include "denseflow/bijections.hpp"
#include "denseflow/ops.hpp"

using namespace denseflow;
using fixtures::randn;
using fixtures::values;
using TD = Tensor<double>;

namespace {

std::unique_ptr<InvConv1x1<double>> invconv_with_scales(std::vector<double> s, std::uint64_t seed) {
  const int c = static_cast<int>(s.size());
  Rng rng(seed);
  std::vector<double> lower(c * c), upper(c * c), sign(c), log_s(c);
  for (auto& v : lower) v = rng.normal();
  for (auto& v : upper) v = rng.normal();
  for (int i = 0; i < c; ++i) {
    sign[i] = s[i] < 0 ? -1.0 : 1.0;
    log_s[i] = std::log(std::abs(s[i]));
  }
  std::vector<int> perm(c);
  for (int i = 0; i < c; ++i) perm[i] = (i + 1) % c;
  return std::make_unique<InvConv1x1<double>>(perm, lower, upper, sign, log_s);
}

}  // namespace

TEST_CASE("actnorm with unit scale and zero bias is the identity") {
  ActNorm<double> a(3);
  a.set({1, 1, 1}, {0, 0, 0});
  const auto x = randn<double>({2, 3, 2, 2}, 1);
  const auto out = a.forward(x);
  CHECK(ops::max_abs_diff(out.y, x) == 0.0);
  for (double v : out.logdet.data()) CHECK(v == 0.0);
}

TEST_CASE("actnorm reciprocal scales cancel in the logdet") {
  ActNorm<double> a(2);
  a.set({2.0, 0.5}, {0.3, -0.1});
  const auto out = a.forward(randn<double>({3, 2, 2, 2}, 2));
  for (double v : out.logdet.data()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("actnorm data init standardises the init batch") {
  ActNorm<double> a(3);
  auto x = ops::add_scalar(randn<double>({8, 3, 4, 4}, 3, 2.5), 3.0);
  CHECK_FALSE(a.initialized());
  const auto y = a.forward(x).y;
  CHECK(a.initialized());
  const auto v = values(y);
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    int count = 0;
    for (int n = 0; n < 8; ++n)
      for (int i = 0; i < 16; ++i) {
        const double e = v[(n * 3 + c) * 16 + i];
        sum += e;
        sq += e * e;
        ++count;
      }
    const double mean = sum / count;
    const double sd = std::sqrt(sq / count - mean * mean);
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(sd - 1.0) < 1e-3);
  }
  // A second batch does not re-initialise.
  const auto scale = values(a.scale());
  a.forward(randn<double>({8, 3, 4, 4}, 4));
  CHECK(values(a.scale()) == scale);
}

TEST_CASE("actnorm rejects a singular scale") {
  ActNorm<double> a(2);
  a.set({1.0, 1e-13}, {0, 0});
  CHECK_THROWS_AS(a.forward(randn<double>({1, 2, 2, 2}, 5)), NumericDomainError);
}

TEST_CASE("invconv identity factors give the identity map") {
  InvConv1x1<double> w({0, 1, 2}, std::vector<double>(9, 0.0), std::vector<double>(9, 0.0), {1, 1, 1}, {0, 0, 0});
  const auto x = randn<double>({2, 3, 2, 2}, 6);
  const auto out = w.forward(x);
  CHECK(ops::max_abs_diff(out.y, x) < 1e-15);
  for (double v : out.logdet.data()) CHECK(v == 0.0);
}

TEST_CASE("invconv log-magnitudes 3 and 1/3 cancel") {
  auto w = invconv_with_scales({3.0, 1.0 / 3.0}, 7);
  const auto out = w->forward(randn<double>({1, 2, 3, 3}, 8));
  CHECK(std::abs(out.logdet[0]) < 1e-13);
}

TEST_CASE("invconv orthogonal init and exact inverse weight") {
  Rng rng(9);
  InvConv1x1<double> w(5, rng);
  const auto m = w.weight();
  const auto wwt = ops::matmul(m, ops::transpose_last2(m));
  CHECK(ops::max_abs_diff(wwt, ops::eye<double>(5)) < 1e-12);
  CHECK(ops::max_abs_diff(ops::matmul(w.inverse_weight(), m), ops::eye<double>(5)) < 1e-12);
  // |det| of an orthogonal matrix is 1.
  CHECK(w.forward(randn<double>({1, 5, 2, 2}, 10)).logdet[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("invconv logdet matches the numeric Jacobian on 1x4x2x2") {
  auto w = invconv_with_scales({1.7, -0.6, 2.2, 0.9}, 11);
  const auto x = randn<double>({1, 4, 2, 2}, 12);
  const double analytic = w->forward(x).logdet[0];
  CHECK(oracle::rel_diff(analytic, fixtures::numeric_logdet(*w, x)) < 1e-3);
}

TEST_CASE("coupling with a saturated stub is the identity") {
  // sigmoid(50 + 2) rounds to 1 in double.
  AffineCoupling<double> cpl(4, std::make_unique<fixtures::ConstNet<double>>(2, 50.0, 0.0));
  const auto x = randn<double>({2, 4, 2, 2}, 13);
  const auto out = cpl.forward(x);
  CHECK(ops::max_abs_diff(out.y, x) == 0.0);
  for (double v : out.logdet.data()) CHECK(std::abs(v) < 1e-18);
}

TEST_CASE("coupling round trip in single precision") {
  AffineCoupling<float> cpl(4, std::make_unique<fixtures::ConvNet<float>>(2, 2, 14));
  const auto x = randn<float>({2, 4, 3, 3}, 15);
  const auto y = cpl.forward(x).y;
  CHECK(ops::max_abs_diff(cpl.inverse(y), x) < 1e-5f);
}

TEST_CASE("coupling logdet matches the numeric Jacobian on 1x4x2x2") {
  AffineCoupling<double> cpl(4, std::make_unique<fixtures::ConvNet<double>>(2, 2, 16));
  const auto x = randn<double>({1, 4, 2, 2}, 17);
  const double analytic = cpl.forward(x).logdet[0];
  CHECK(oracle::rel_diff(analytic, fixtures::numeric_logdet(cpl, x)) < 1e-3);
}

TEST_CASE("coupling splits odd channel counts at ceil(c/2)") {
  CHECK(AffineCoupling<double>::split_point(5) == 3);
  AffineCoupling<double> cpl(5, std::make_unique<fixtures::ConvNet<double>>(3, 2, 18));
  const auto x = randn<double>({2, 5, 2, 2}, 19);
  const auto y = cpl.forward(x).y;
  CHECK(ops::max_abs_diff(ops::slice(y, 1, 0, 3), ops::slice(x, 1, 0, 3)) == 0.0);
  CHECK(ops::max_abs_diff(cpl.inverse(y), x) < 1e-12);
}

TEST_CASE("reversed coupling conditions on the second part") {
  CHECK(AffineCoupling<double>::parts(5, false) == std::pair{3, 2});
  CHECK(AffineCoupling<double>::parts(5, true) == std::pair{2, 3});
  AffineCoupling<double> cpl(5, std::make_unique<fixtures::ConvNet<double>>(2, 3, 50), true);
  const auto x = randn<double>({2, 5, 2, 2}, 51);
  const auto out = cpl.forward(x);
  CHECK(ops::max_abs_diff(ops::slice(out.y, 1, 3, 2), ops::slice(x, 1, 3, 2)) == 0.0);
  CHECK(ops::max_abs_diff(cpl.inverse(out.y), x) < 1e-12);
  const auto x1 = randn<double>({1, 5, 2, 2}, 52);
  CHECK(oracle::rel_diff(cpl.forward(x1).logdet[0], fixtures::numeric_logdet(cpl, x1)) < 1e-3);
}

TEST_CASE("squeeze is a zero-logdet permutation") {
  Squeeze<double> sq;
  const auto x = randn<double>({2, 3, 8, 8}, 20);
  const auto out = sq.forward(x);
  CHECK(out.y.shape() == Shape{2, 12, 4, 4});
  for (double v : out.logdet.data()) CHECK(v == 0.0);
  CHECK(ops::max_abs_diff(sq.inverse(out.y), x) == 0.0);
  CHECK_THROWS_AS(sq.forward(randn<double>({1, 3, 3, 4}, 21)), ShapeError);
}

TEST_CASE("factor-out standard prior at the mode") {
  Rng rng(22);
  FactorOut<double> fo(4, false, rng);
  auto x = randn<double>({1, 4, 2, 2}, 23);
  // Zero the dropped half.
  x = ops::concat<double>({ops::slice(x, 1, 0, 2), TD(Shape{1, 2, 2, 2})}, 1);
  const auto r = fo.forward(x);
  const double d = 8.0;
  CHECK(r.logprob[0] == doctest::Approx(d * std::log(1.0 / std::sqrt(2.0 * std::numbers::pi))).epsilon(1e-14));
  CHECK(r.retained.numel() + r.dropped.numel() == x.numel());
}

TEST_CASE("factor-out conditional prior matches a scalar oracle") {
  Rng rng(24);
  FactorOut<double> fo(6, true, rng);
  fixtures::fill_params(fo, ".weight", 25, 0.2);
  fixtures::fill_params(fo, ".bias", 26, 0.2);
  const auto x = randn<double>({2, 6, 3, 3}, 27);
  const auto r = fo.forward(x);
  const auto [mu, log_std] = fo.prior(r.retained);
  const auto z = values(r.dropped), m = values(mu), ls = values(log_std);
  for (int n = 0; n < 2; ++n) {
    double ref = 0.0;
    for (int i = 0; i < 27; ++i) {
      const int k = n * 27 + i;
      ref += oracle::normal_logpdf(z[k], m[k], std::exp(ls[k]));
    }
    CHECK(std::abs(r.logprob[n] - ref) < 1e-10);
  }
  CHECK(ops::max_abs_diff(fo.inverse(r.retained, r.dropped), x) == 0.0);
  CHECK_THROWS_AS(FactorOut<double>(5, true, rng), ShapeError);
}

TEST_CASE("factor-out sampling scales noise by temperature") {
  Rng rng(28);
  FactorOut<double> fo(4, false, rng);
  const TD retained(Shape{1, 2, 2, 2});
  ReplayNoise<double> noise({TD(Shape{1, 2, 2, 2}, 2.0)});
  const auto z = fo.sample_dropped(retained, 0.5, noise);
  for (double v : z.data()) CHECK(v == 1.0);
}

TEST_CASE("uniform dequantization scaling correction") {
  Rng rng(29);
  Dequantizer<double> dq(3, DequantMode::uniform, 0, rng);
  TD pixels(Shape{2, 3, 8, 8}, 17.0);
  RngNoise<double> noise(rng);
  const auto r = dq.forward(pixels, noise);
  CHECK(r.correction[0] == doctest::Approx(-192.0 * std::log(256.0)).epsilon(1e-14));
  CHECK(r.correction[0] == doctest::Approx(-1064.68).epsilon(1e-5));
  for (double v : r.penalty.data()) CHECK(v == 0.0);
  CHECK(ops::max_abs_diff(Dequantizer<double>::quantize(r.x), pixels) == 0.0);
  for (double v : r.x.data()) CHECK((v >= 0.0 && v < 1.0));
}

TEST_CASE("dequantization rejects out-of-range pixels") {
  Rng rng(30);
  Dequantizer<double> dq(1, DequantMode::uniform, 0, rng);
  RngNoise<double> noise(rng);
  CHECK_THROWS_AS(dq.forward(TD(Shape{1, 1, 2, 2}, 256.0), noise), DataError);
  CHECK_THROWS_AS(dq.forward(TD(Shape{1, 1, 2, 2}, -1.0), noise), DataError);
  CHECK_THROWS_AS(dq.forward(TD(Shape{1, 1, 2, 2}, 0.5), noise), DataError);
}

TEST_CASE("variational dequantization at identity init matches a scalar oracle") {
  for (int c : {1, 3}) {
    Rng rng(31);
    Dequantizer<double> dq(c, DequantMode::variational, 8, rng);
    Rng prng(32);
    TD pixels(Shape{2, c, 4, 4});
    for (auto& v : pixels.mutable_data()) v = static_cast<double>(prng.below(256));
    const auto eps = randn<double>(pixels.shape(), 33);
    ReplayNoise<double> noise({eps});
    const auto r = dq.forward(pixels, noise);
    const auto e = values(eps);
    const int d = c * 16;
    for (int n = 0; n < 2; ++n) {
      double ref = 0.0;
      for (int i = 0; i < d; ++i) {
        const double v = e[n * d + i];
        const double sig = 1.0 / (1.0 + std::exp(-v));
        ref += oracle::normal_logpdf(v) - std::log(sig * (1.0 - sig));
      }
      CHECK(std::abs(r.penalty[n] - ref) < 1e-8);
    }
    CHECK(ops::max_abs_diff(Dequantizer<double>::quantize(r.x), pixels) == 0.0);
  }
}

TEST_CASE("every bijection inverts in single precision over 1000 trials") {
  Rng rng(34);
  ActNorm<float> an(4);
  an.set({1.3f, -0.7f, 2.1f, 0.4f}, {0.1f, -0.2f, 0.3f, 0.0f});
  InvConv1x1<float> ic(4, rng);
  AffineCoupling<float> cpl(4, std::make_unique<fixtures::ConvNet<float>>(2, 2, 35));
  Squeeze<float> sq;
  std::vector<Bijection<float>*> all{&an, &ic, &cpl, &sq};
  float worst = 0.0f;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x = randn<float>({1, 4, 2, 2}, 1000 + trial);
    for (auto* b : all) worst = std::max(worst, ops::max_abs_diff(b->inverse(b->forward(x).y), x));
  }
  CHECK(worst < 1e-4f);
}

TEST_CASE("every bijection's logdet matches the numeric Jacobian") {
  Rng rng(36);
  ActNorm<double> an(3);
  an.set({1.3, -0.7, 2.1}, {0.1, -0.2, 0.3});
  InvConv1x1<double> ic(3, rng);
  fixtures::fill_params(ic, ".log_s", 37, 0.4);
  AffineCoupling<double> cpl(3, std::make_unique<fixtures::ConvNet<double>>(2, 1, 38));
  Squeeze<double> sq;
  std::vector<Bijection<double>*> all{&an, &ic, &cpl, &sq};
  for (auto* b : all) {
    const auto x = randn<double>({1, 3, 4, 4}, 39);  // 48 dims
    const double analytic = b->forward(x).logdet[0];
    const double numeric = fixtures::numeric_logdet(*b, x);
    INFO(b->kind());
    if (std::abs(numeric) < 1e-6) {
      CHECK(std::abs(analytic - numeric) < 1e-6);
    } else {
      CHECK(oracle::rel_diff(analytic, numeric) < 1e-3);
    }
  }
}

TEST_CASE("chain logdet is the sum of its members") {
  Rng rng(40);
  Chain<double> chain;
  auto an = std::make_unique<ActNorm<double>>(4);
  an->set({1.5, 0.5, 2.0, 1.1}, {0, 0, 0, 0});
  chain.push(std::move(an));
  chain.push(std::make_unique<InvConv1x1<double>>(4, rng));
  chain.push(std::make_unique<AffineCoupling<double>>(4, std::make_unique<fixtures::ConvNet<double>>(2, 2, 41)));
  const auto x = randn<double>({2, 4, 2, 2}, 42);
  const auto total = chain.forward(x);
  TD y = x;
  std::vector<double> sum(2, 0.0);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const auto s = chain.at(i).forward(y);
    y = s.y;
    for (int n = 0; n < 2; ++n) sum[n] += s.logdet[n];
  }
  for (int n = 0; n < 2; ++n) CHECK(total.logdet[n] == sum[n]);
  CHECK(ops::max_abs_diff(chain.inverse(total.y), x) < 1e-12);
  ParameterRegistry<double> reg;
  chain.collect("flow", reg);
  CHECK(reg.find("flow.0.actnorm.scale") != nullptr);
  CHECK(reg.find("flow.1.invconv.log_s") != nullptr);
  CHECK(reg.find("flow.2.coupling.net.conv.weight") != nullptr);
}

TEST_CASE("gradients through invconv and coupling parameters") {
  Rng rng(43);
  InvConv1x1<double> ic(4, rng);
  AffineCoupling<double> cpl(4, std::make_unique<fixtures::ConvNet<double>>(2, 2, 44));
  ParameterRegistry<double> reg;
  ic.collect("ic", reg);
  cpl.collect("cp", reg);
  std::vector<TD> leaves;
  for (const auto& e : reg.trainable()) leaves.push_back(e.tensor);
  const auto x = randn<double>({2, 4, 3, 3}, 45);
  auto loss = [&](const std::vector<TD>&) {
    auto a = ic.forward(x);
    auto b = cpl.forward(a.y);
    return ops::sum(ops::add(ops::add(a.logdet, b.logdet), ops::sum_per_example(ops::square(b.y))));
  };
  const auto res = gradcheck::run(loss, leaves, 1e-5, 12);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("gradients through the variational dequantizer") {
  Rng rng(46);
  Dequantizer<double> dq(2, DequantMode::variational, 4, rng);
  fixtures::fill_params(dq, ".weight", 47, 0.3);
  ParameterRegistry<double> reg;
  dq.collect("dq", reg);
  std::vector<TD> leaves;
  for (const auto& e : reg.trainable()) leaves.push_back(e.tensor);
  TD pixels(Shape{2, 2, 3, 3});
  Rng prng(48);
  for (auto& v : pixels.mutable_data()) v = static_cast<double>(prng.below(256));
  const auto eps = randn<double>(pixels.shape(), 49);
  auto loss = [&](const std::vector<TD>&) {
    ReplayNoise<double> noise({eps});
    auto r = dq.forward(pixels, noise);
    return ops::add(ops::sum(r.penalty), ops::sum(ops::square(r.x)));
  };
  const auto res = gradcheck::run(loss, leaves, 1e-5, 10);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_error < 1e-4);
}
