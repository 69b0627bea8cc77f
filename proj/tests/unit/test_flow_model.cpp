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
#include <numeric>
#include <string>

#include "doctest.h"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include "denseflow/flow_model.hpp"
#include "denseflow/ops.hpp"

using namespace denseflow;
using fixtures::values;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
Tensor<T> pixels(int b, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> px(Shape{b, c, h, w});
  for (auto& v : px.mutable_data()) v = static_cast<T>(std::floor(rng.uniform() * 256.0));
  return px;
}

// Random weights on every zero-initialised output layer so that no coupling,
// conditioner or prior is trivially the identity.
template <typename T>
void perturb(const FlowModel<T>& m, std::uint64_t seed) {
  Rng rng(seed);
  const auto reg = m.parameters();
  for (const auto& e : reg.entries()) {
    const bool zero_init = ends_with(e.name, "blend.weight") || ends_with(e.name, "net.out.weight") ||
                           ends_with(e.name, "cross.out.weight") || ends_with(e.name, "drop.prior.weight");
    if (!zero_init) continue;
    Tensor<T> t = e.tensor;
    for (auto& v : t.mutable_data()) v = static_cast<T>(0.02 * rng.normal());
  }
}

FlowConfig tiny_glow(int c, int h, int w) {
  FlowConfig cfg;
  cfg.channels = c;
  cfg.height = h;
  cfg.width = w;
  cfg.blocks = {{1}};
  cfg.growth = 0;
  cfg.coupling = CouplingKind::glow;
  cfg.glow_hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("one glow module on 1x4x4 matches the closed-form parameter census") {
  // After the initial squeeze the module sees 4 channels split 2:2.
  const std::int64_t actnorm = 2 * 4, invconv = 2 * 16 + 4;
  const std::int64_t net = (2 * 8 * 9 + 8) + (8 * 8 + 8) + (8 * 4 * 9 + 4);
  const FlowModel<double> m(tiny_glow(1, 4, 4));
  CHECK(m.parameters().trainable_count() == actnorm + invconv + net);
  CHECK(m.plan().params == actnorm + invconv + net);
  CHECK(m.plan().modules == 1);
}

TEST_CASE("analytic parameter plan agrees with the built registry") {
  std::vector<FlowConfig> cfgs;
  for (const auto& n : preset_names()) {
    const auto cfg = preset(n).model;
    cfgs.push_back(cfg.height > 8 ? desk_scaled(cfg) : cfg);
  }
  auto strict = preset("denseflow-12-4").model;
  strict.context = ContextMode::strict;
  strict.dequant = DequantMode::variational;
  strict.conditional_prior = false;
  cfgs.push_back(strict);
  auto odd = tiny_glow(3, 6, 6);
  odd.initial_squeeze = false;
  odd.dequant = DequantMode::variational;
  cfgs.push_back(odd);
  for (const auto& cfg : cfgs) {
    CAPTURE(cfg.name);
    const FlowModel<float> m(cfg);
    CHECK(m.parameters().trainable_count() == m.plan().params);
  }
}

TEST_CASE("full-size layouts count their modules") {
  CHECK(plan_model(preset("denseflow-45-6").model).modules == 5 * 3 + 3 * 5 + 15);
  CHECK(plan_model(preset("denseflow-74-10").model).modules == 6 * 5 + 4 * 6 + 20);
  CHECK(plan_model(preset("glow-45").model).modules == 45);
  CHECK(plan_model(preset("denseflow-12-4").model).modules == 12);
}

TEST_CASE("dimension accounting balances for every preset") {
  for (const auto& n : preset_names()) {
    CAPTURE(n);
    const auto p = plan_model(preset(n).model);
    CHECK(p.input_dims + p.noise_dims == p.latent_dims + p.factored_dims);
    CHECK(p.input_dims == 3 * (n.rfind("denseflow-12", 0) == 0 || n.rfind("ablation", 0) == 0 ? 64 : 1024));
  }
  // Desk preset by hand: 12x4x4 grows to 16 channels, then 64x2x2 drops to 32
  // and grows to 36.
  const auto p = plan_model(preset("denseflow-12-4").model);
  CHECK(p.noise_dims == 4 * 16 + 4 * 4);
  CHECK(p.latent_dims == 36 * 4);
  CHECK(p.factored_dims == 32 * 4);
}

TEST_CASE("infeasible layouts name the failing stage") {
  auto cfg = preset("denseflow-45-6").model;
  cfg.height = cfg.width = 12;
  try {
    plan_model(cfg);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("block1.drop") != std::string::npos);
  }
  auto one = tiny_glow(1, 4, 4);
  one.initial_squeeze = false;
  try {
    plan_model(one);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("block0.unit0.module0") != std::string::npos);
  }
  auto empty = tiny_glow(3, 4, 4);
  empty.blocks = {{2}, {}};
  CHECK_THROWS_AS(plan_model(empty), ConfigError);
}

TEST_CASE("identity flow gives the analytic bound") {
  auto cfg = tiny_glow(3, 4, 4);
  FlowModel<double> m(cfg);
  const auto reg = m.parameters();
  for (const auto& e : reg.entries()) {
    Tensor<double> t = e.tensor;
    auto d = t.mutable_data();
    if (ends_with(e.name, "actnorm.scale") || ends_with(e.name, "actnorm.initialized")) {
      std::fill(d.begin(), d.end(), 1.0);
    } else if (ends_with(e.name, "lower") || ends_with(e.name, "upper") || ends_with(e.name, "log_s") ||
               ends_with(e.name, "actnorm.bias")) {
      std::fill(d.begin(), d.end(), 0.0);
    } else if (ends_with(e.name, "net.out.bias")) {
      // s_raw channels come first: sigmoid(52) is 1 to double precision.
      std::fill(d.begin(), d.begin() + 6, 50.0);
      std::fill(d.begin() + 6, d.end(), 0.0);
    }
  }
  Rng rng(1);
  RngNoise<double> noise(rng);
  LatentRecord<double> rec;
  const auto px = pixels<double>(2, 3, 4, 4, 2);
  const auto r = m.forward(px, noise, &rec);
  const auto x = values(rec.x);
  for (int b = 0; b < 2; ++b) {
    double want = -48.0 * std::log(256.0);
    for (int i = 0; i < 48; ++i) want += oracle::normal_logpdf(x[b * 48 + i], 0.0, 1.0);
    CHECK(r.bound[b] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("encode then decode recovers the dequantised input for every preset") {
  for (const auto& n : preset_names()) {
    CAPTURE(n);
    auto cfg = preset(n).model;
    if (cfg.height > 8) cfg = desk_scaled(cfg);
    FlowModel<float> m(cfg);
    Rng rng(3);
    RngNoise<float> noise(rng);
    const auto px = pixels<float>(4, cfg.channels, cfg.height, cfg.width, 4);
    m.forward(px, noise);  // data-dependent initialisation
    perturb(m, 5);
    m.set_training(false);
    LatentRecord<float> rec;
    m.forward(px, noise, &rec);
    const auto back = m.decode(rec);
    CHECK(ops::max_abs_diff(back, rec.x) < 1e-3f);
    CHECK(rec.dropped.size() == cfg.blocks.size() - 1);
  }
}

TEST_CASE("the bound is equivariant to batch permutation") {
  auto cfg = preset("denseflow-12-4").model;
  cfg.dequant = DequantMode::variational;
  FlowModel<double> m(cfg);
  perturb(m, 6);
  const int b = 5;
  const auto px = pixels<double>(b, 3, 8, 8, 7);
  Rng rng(8);
  RngNoise<double> inner(rng);
  RecordingNoise<double> rec(inner);
  m.forward(px, rec);  // initialise actnorm so both passes share parameters
  RecordingNoise<double> rec2(inner);
  const auto base = m.forward(px, rec2).bound;
  const std::vector<int> perm{3, 0, 4, 1, 2};
  auto permute = [&](const Tensor<double>& t) {
    std::vector<Tensor<double>> rows;
    for (int i : perm) rows.push_back(ops::slice(t, 0, i, 1));
    return ops::concat(rows, 0);
  };
  std::vector<Tensor<double>> draws;
  for (const auto& d : rec2.draws()) draws.push_back(permute(d));
  ReplayNoise<double> replay(draws);
  const auto shuffled = m.forward(permute(px), replay).bound;
  for (int i = 0; i < b; ++i) CHECK(shuffled[i] == doctest::Approx(base[perm[i]]).epsilon(1e-10));
}

TEST_CASE("seeded forward and sample are bit-reproducible") {
  auto run = [] {
    const auto cfg = preset("denseflow-12-4").model;
    FlowModel<float> m(cfg);
    perturb(m, 9);
    Rng rng(10);
    RngNoise<float> noise(rng);
    const auto bound = values(m.forward(pixels<float>(3, 3, 8, 8, 11), noise).bound);
    m.set_training(false);
    const auto img = values(m.sample(2, 0.8f, noise));
    return std::pair{bound, img};
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("sampling is a single inverse pass that never runs a conditioner") {
  const auto cfg = preset("denseflow-12-4").model;
  FlowModel<float> m(cfg);
  Rng rng(12);
  RngNoise<float> noise(rng);
  m.forward(pixels<float>(4, 3, 8, 8, 13), noise);
  perturb(m, 14);
  m.set_training(false);
  const auto calls = m.conditioner_calls();
  CHECK(calls > 0);
  const auto img = m.sample(128, 0.8f, noise);
  CHECK(img.shape() == Shape{128, 3, 8, 8});
  CHECK(m.inverse_calls() == static_cast<std::uint64_t>(m.plan().modules));
  CHECK(m.conditioner_calls() == calls);
  for (float v : img.data()) CHECK((v >= 0.0f && v <= 255.0f && v == std::floor(v)));
  // Zero temperature collapses every latent to its mean.
  const auto a = values(m.sample(2, 0.0f, noise)), b = values(m.sample(2, 0.0f, noise));
  CHECK(a == b);
  CHECK_THROWS_AS(m.sample(1, -1.0f, noise), ConfigError);
}

TEST_CASE("single-sample mc bound equals the plain bound") {
  const auto cfg = preset("denseflow-12-4").model;
  FlowModel<double> m(cfg);
  perturb(m, 15);
  const auto px = pixels<double>(2, 3, 8, 8, 16);
  Rng warm(0);
  RngNoise<double> wn(warm);
  m.forward(px, wn);
  m.set_training(false);
  Rng r1(17), r2(17);
  RngNoise<double> n1(r1), n2(r2);
  const auto plain = m.forward(px, n1).bound;
  const auto mc = m.bound_mc(px, 1, n2);
  for (int i = 0; i < 2; ++i) CHECK(mc[i] == doctest::Approx(plain[i]).epsilon(1e-13));
  CHECK_THROWS_AS(m.bound_mc(px, 0, n2), ConfigError);
}

TEST_CASE("non-finite intermediates name the stage") {
  const auto cfg = preset("denseflow-12-4").model;
  FlowModel<float> m(cfg);
  Rng rng(18);
  RngNoise<float> noise(rng);
  const auto px = pixels<float>(2, 3, 8, 8, 19);
  m.forward(px, noise);
  const auto reg = m.parameters();
  const auto* e = reg.find("block1.unit0.module1.0.actnorm.scale");
  REQUIRE(e);
  Tensor<float> t = e->tensor;
  t.mutable_data()[0] = std::numeric_limits<float>::infinity();
  try {
    m.forward(px, noise);
    FAIL("expected a numeric error");
  } catch (const NumericError& err) {
    CHECK(std::string(err.what()).find("block1.unit0.module1") != std::string::npos);
  }
}

TEST_CASE("config text round trips and rejects unknown keys") {
  for (const auto& n : preset_names()) {
    const auto text = format_config(preset(n));
    CHECK(format_config(parse_config(text)) == text);
  }
  const auto cfg = parse_config("[model]\nblocks = 2,1;4 # two blocks\ngrowth = 7\n[train]\nlr = 0.0025\n");
  CHECK(cfg.model.blocks == std::vector<std::vector<int>>{{2, 1}, {4}});
  CHECK(cfg.model.growth == 7);
  CHECK(cfg.train.lr == 0.0025);
  CHECK_THROWS_AS(parse_config("[model]\nwidht = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[optim]\nlr = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nlr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("growth = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\nnoise = pink\n"), ConfigError);
  CHECK_THROWS_AS(preset("denseflow-1-1"), ConfigError);
}
