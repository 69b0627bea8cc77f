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
#include <memory>
#include <numbers>

#include "doctest.h"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include "denseflow/cross_unit.hpp"
#include "denseflow/ops.hpp"

using namespace denseflow;
using fixtures::randn;
using fixtures::values;
using TD = Tensor<double>;

namespace {

const double kLn2Pi = std::log(2.0 * std::numbers::pi);

// Learned coupling with every weight randomised so that mu and sigma vary.
std::unique_ptr<CrossUnitCoupling<double>> busy_coupling(int k, int ctx, std::uint64_t seed) {
  Rng rng(seed);
  auto cu = std::make_unique<CrossUnitCoupling<double>>(k, ctx, 6, NoiseMode::learned, rng);
  fixtures::fill_params(*cu, "weight", seed + 1, 0.4);
  fixtures::fill_params(*cu, "bias", seed + 2, 0.3);
  return cu;
}

// Log-mean-exp of per-sample bounds and its delta-method standard error.
std::pair<double, double> log_mean_exp(const std::vector<double>& v) {
  double mx = v.front();
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0, s2 = 0.0;
  for (double x : v) {
    const double w = std::exp(x - mx);
    s += w;
    s2 += w * w;
  }
  const double n = static_cast<double>(v.size());
  const double mean = s / n, var = s2 / n - mean * mean;
  return {mx + std::log(mean), std::sqrt(var / n) / mean};
}

}  // namespace

TEST_CASE("white noise at e = 0 costs the normal log-normaliser") {
  Rng rng(1);
  CrossUnitCoupling<double> cu(3, 5, 4, NoiseMode::white, rng);
  ZeroNoise<double> zero;
  const auto out = cu.augment(randn<double>({2, 5, 4, 4}, 2), {}, zero);
  for (int i = 0; i < 2; ++i) {
    CHECK(out.noise_penalty[i] == doctest::Approx(3 * 16 / 2.0 * kLn2Pi).epsilon(1e-14));
    CHECK(out.log_sigma_sum[i] == 0.0);
  }
}

TEST_CASE("augmentation appends the growth rate in channels") {
  Rng rng(3);
  CrossUnitCoupling<double> cu(10, 12, 8, NoiseMode::learned, rng);
  const auto z = randn<double>({2, 12, 8, 8}, 4);
  Rng nrng(5);
  RngNoise<double> noise(nrng);
  const auto out = cu.augment(z, {z}, noise);
  CHECK(out.z_aug.shape() == Shape{2, 22, 8, 8});
  const auto back = CrossUnitCoupling<double>::strip(out.z_aug, 10);
  CHECK(back.dim(1) == 12);
  CHECK(ops::max_abs_diff(back, z) == 0.0);
  // Zero-initialised output layer: mu = 0, sigma = softplus(0) + 1e-4.
  for (double v : out.mu.data()) CHECK(v == 0.0);
  for (double v : out.sigma.data()) CHECK(v == doctest::Approx(std::log(2.0) + 1e-4).epsilon(1e-14));
}

TEST_CASE("strip edge cases") {
  const auto z = randn<double>({1, 4, 2, 2}, 6);
  CHECK(ops::max_abs_diff(CrossUnitCoupling<double>::strip(z, 0), z) == 0.0);
  CHECK_THROWS_AS(CrossUnitCoupling<double>::strip(z, 5), ShapeError);
  Rng rng(7);
  CrossUnitCoupling<double> none(0, 4, 4, NoiseMode::learned, rng);
  ZeroNoise<double> zero;
  const auto out = none.augment(z, {z}, zero);
  CHECK(ops::max_abs_diff(out.z_aug, z) == 0.0);
  CHECK(out.noise_penalty[0] == 0.0);
}

TEST_CASE("context must match spatially and in channel count") {
  const auto owned = busy_coupling(2, 6, 8);
  auto& cu = *owned;
  ZeroNoise<double> zero;
  const auto z = randn<double>({1, 3, 4, 4}, 9);
  CHECK_THROWS_AS(cu.augment(z, {randn<double>({1, 6, 2, 2}, 10)}, zero), ShapeError);
  CHECK_THROWS_AS(cu.augment(z, {z}, zero), ShapeError);
  CHECK_NOTHROW(cu.augment(z, {z, z}, zero));
}

TEST_CASE("terms recompute from the logged mu, sigma and e") {
  const auto owned = busy_coupling(3, 4, 11);
  auto& cu = *owned;
  Rng nrng(12);
  RngNoise<double> noise(nrng);
  const auto z = randn<double>({3, 4, 3, 3}, 13);
  const auto out = cu.augment(z, {z}, noise);
  const auto mu = values(out.mu), sg = values(out.sigma), e = values(out.e), za = values(out.z_aug);
  double spread = 0.0;
  for (std::size_t i = 1; i < sg.size(); ++i) spread = std::max(spread, std::abs(sg[i] - sg[0]));
  CHECK(spread > 1e-2);
  const int per = 3 * 9;
  for (int b = 0; b < 3; ++b) {
    double ls = 0.0, sq = 0.0;
    for (int j = 0; j < per; ++j) {
      ls += std::log(sg[b * per + j]);
      sq += e[b * per + j] * e[b * per + j];
      // Noise channels sit after the 4 input channels.
      CHECK(za[b * 7 * 9 + 4 * 9 + j] == doctest::Approx(sg[b * per + j] * e[b * per + j] + mu[b * per + j]));
    }
    CHECK(out.log_sigma_sum[b] == doctest::Approx(ls).epsilon(1e-13));
    CHECK(out.noise_penalty[b] == doctest::Approx(0.5 * sq + per / 2.0 * kLn2Pi).epsilon(1e-13));
  }
}

TEST_CASE("monte carlo bound on an analytic toy matches the exact marginal") {
  // One data dimension plus one noise dimension under a standard normal prior
  // with the identity flow above: integrating the noise out leaves ln N(z).
  const auto owned = busy_coupling(1, 1, 14);
  auto& cu = *owned;
  const TD z(Shape{1, 1, 1, 1}, {0.7});
  const double exact = oracle::normal_logpdf(0.7, 0.0, 1.0);
  Rng nrng(15);
  RngNoise<double> noise(nrng);
  std::vector<double> bounds;
  for (int s = 0; s < 10000; ++s) {
    const auto out = cu.augment(z, {z}, noise);
    const double y = out.z_aug[1];
    bounds.push_back(exact + oracle::normal_logpdf(y, 0.0, 1.0) + out.noise_penalty[0] + out.log_sigma_sum[0]);
  }
  const auto [est, se] = log_mean_exp(bounds);
  MESSAGE("K = 1e4 bound " << est << " vs exact " << exact << " (se " << se << ")");
  CHECK(std::abs(est - exact) < 3 * se);
  CHECK(se > 0.0);
}

TEST_CASE("more samples tighten the bound on average") {
  const auto owned = busy_coupling(1, 1, 16);
  auto& cu = *owned;
  const TD z(Shape{1, 1, 1, 1}, {-1.2});
  Rng nrng(17);
  RngNoise<double> noise(nrng);
  auto draw = [&] {
    const auto out = cu.augment(z, {z}, noise);
    return oracle::normal_logpdf(out.z_aug[1], 0.0, 1.0) + out.noise_penalty[0] + out.log_sigma_sum[0];
  };
  double m1 = 0.0, m10 = 0.0;
  for (int t = 0; t < 200; ++t) {
    m1 += draw();
    std::vector<double> ten;
    for (int s = 0; s < 10; ++s) ten.push_back(draw());
    m10 += log_mean_exp(ten).first;
  }
  CHECK(m10 / 200 >= m1 / 200);
  CHECK(m10 / 200 <= 1e-9);
}

TEST_CASE("stripping never runs the conditioner") {
  const auto owned = busy_coupling(2, 3, 18);
  auto& cu = *owned;
  ZeroNoise<double> zero;
  const auto z = randn<double>({1, 3, 2, 2}, 19);
  const auto out = cu.augment(z, {z}, zero);
  CHECK(cu.conditioner_calls() == 1);
  CrossUnitCoupling<double>::strip(out.z_aug, 2);
  CHECK(cu.conditioner_calls() == 1);
}
