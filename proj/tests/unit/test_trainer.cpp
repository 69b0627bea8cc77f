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
#include <filesystem>

#include "doctest.h"

#include "denseflow/ops.hpp"
#include "denseflow/trainer.hpp"

using namespace denseflow;

namespace {

std::vector<NamedTensor<double>> scalar_param(double value) {
  Tensor<double> t(Shape{1}, {value});
  t.set_requires_grad(true);
  return {{"theta", t, ParamKind::trainable}};
}

void set_grad(const NamedTensor<double>& p, double g) {
  Tensor<double> t = p.tensor;
  t.mutable_grad()[0] = g;
}

RunConfig small_run() {
  auto cfg = preset("denseflow-12-4");
  cfg.train.batch_size = 8;
  cfg.train.warmup_steps = 10;
  cfg.train.log_every = 1;
  cfg.train.seed = 3;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("denseflow_test_" + name)).string();
}

}  // namespace

TEST_CASE("adamax leaves parameters alone under zero gradients") {
  const auto p = scalar_param(1.5);
  Adamax<double> opt;
  for (int i = 0; i < 3; ++i) {
    set_grad(p[0], 0.0);
    opt.step(p, 1e-3);
  }
  CHECK(p[0].tensor[0] == 1.5);
}

TEST_CASE("adamax first step with unit gradient moves by lr / (1 + eps)") {
  const auto p = scalar_param(0.0);
  Adamax<double> opt;
  set_grad(p[0], 1.0);
  opt.step(p, 1e-3);
  CHECK(p[0].tensor[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adamax follows the recurrence on a scalar quadratic") {
  // Loss (theta - 3)^2 from theta = 0.
  const auto p = scalar_param(0.0);
  Adamax<double> opt;
  double theta = 0.0, m = 0.0, u = 0.0;
  for (int t = 1; t <= 5; ++t) {
    set_grad(p[0], 2.0 * (p[0].tensor[0] - 3.0));
    opt.step(p, 0.1);
    const double g = 2.0 * (theta - 3.0);
    m = 0.9 * m + 0.1 * g;
    u = std::max(0.999 * u, std::abs(g));
    theta -= 0.1 / (1.0 - std::pow(0.9, t)) * m / (u + 1e-8);
    CHECK(std::abs(p[0].tensor[0] - theta) < 1e-12);
  }
  set_grad(p[0], std::nan(""));
  CHECK_THROWS_AS(opt.step(p, 0.1), TrainingError);
}

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_steps = 4;
  cfg.decay = 0.95;
  cfg.epochs = 3;
  cfg.finetune_lr = 2e-5;
  CHECK(lr_at(0, 0, cfg) == 0.0);
  CHECK(lr_at(10, 2, cfg) == doctest::Approx(1e-3 * 0.9025).epsilon(1e-15));
  CHECK(lr_at(40, 3, cfg) == 2e-5);
  // 3 epochs of 10 steps against the closed form, exactly.
  for (int step = 0; step < 30; ++step) {
    const int epoch = step / 10;
    const double want = 1e-3 * std::min(1.0, step / 4.0) * std::pow(0.95, epoch);
    CHECK(lr_at(step, epoch, cfg) == want);
  }
  cfg.warmup_steps = 0;
  CHECK(lr_at(0, 0, cfg) == 1e-3);
}

TEST_CASE("gradient clipping caps the global norm") {
  Tensor<double> a(Shape{2}, {0.0, 0.0}), b(Shape{1}, {0.0});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  a.mutable_grad()[0] = 300.0;
  a.mutable_grad()[1] = 400.0;
  b.mutable_grad()[0] = 1200.0;
  std::vector<NamedTensor<double>> ps{{"a", a, ParamKind::trainable}, {"b", b, ParamKind::trainable}};
  CHECK(clip_grad_norm(ps, 100.0) == doctest::Approx(1300.0));
  double sq = 0.0;
  for (const auto& p : ps)
    for (double g : p.tensor.grad()) sq += g * g;
  CHECK(std::sqrt(sq) <= 100.0 + 1e-6);
  CHECK(clip_grad_norm(ps, 1000.0) == doctest::Approx(100.0));
}

TEST_CASE("checkpoint bytes round trip and report offsets") {
  Checkpoint ck;
  ck.put("w", Tensor<float>(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  ck.put_values("counter", {7.0});
  ck.config = "[model]\ngrowth = 4\n";
  ck.rng_state = "12 34";
  const auto bytes = encode_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DFCK");
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.at("w").tensor<double>()[5] == 6.0);
  CHECK(back.at("w").dtype == DType::f32);
  CHECK(back.config == ck.config);
  auto cut = bytes;
  cut.resize(30);
  try {
    decode_checkpoint(cut);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    // 12 header bytes, then name length and "w", dtype and rank; the second
    // extent starts at byte 27 and runs past the cut.
    CHECK(std::string(e.what()).find("truncated extent at byte offset 27") != std::string::npos);
  }
  CHECK_THROWS_AS(back.at("missing"), DataError);
}

TEST_CASE("training logs the scheduled learning rate and finite diagnostics") {
  const auto cfg = small_run();
  FlowModel<float> model(cfg.model);
  const auto data = synth_textures(64, 8, 8, 3, 1);
  Trainer<float> trainer(model, data, cfg);
  CHECK(trainer.steps_per_epoch() == 8);
  std::vector<StepLog> logs;
  for (int i = 0; i < 12; ++i) logs.push_back(trainer.step());
  for (const auto& l : logs) {
    CHECK(l.lr == lr_at(l.step - 1, l.epoch, cfg.train));
    CHECK(std::isfinite(l.bpd));
    CHECK(l.grad_norm > 0.0);
    CHECK(l.min_invconv > 0.0);
    CHECK(l.min_coupling_scale > 0.0);
  }
  CHECK(logs[8].epoch == 1);
  CHECK(trainer.epoch() == 1);
}

TEST_CASE("resume mid-epoch reproduces the uninterrupted trace bit-exactly") {
  const auto cfg = small_run();
  const auto data = synth_textures(64, 8, 8, 3, 2);
  FlowModel<float> model(cfg.model);
  Trainer<float> trainer(model, data, cfg);
  for (int i = 0; i < 5; ++i) trainer.step();
  const auto bytes = encode_checkpoint(trainer.snapshot());
  std::vector<double> straight;
  for (int i = 0; i < 10; ++i) straight.push_back(trainer.step().bpd);

  const auto ck = decode_checkpoint(bytes);
  RunConfig loaded;
  auto resumed_model = model_from_checkpoint<float>(ck, &loaded);
  Trainer<float> resumed(*resumed_model, data, loaded);
  resumed.restore(ck);
  CHECK(resumed.steps_done() == 5);
  std::vector<double> again;
  for (int i = 0; i < 10; ++i) again.push_back(resumed.step().bpd);
  CHECK(again == straight);
  const auto a = model.parameters(), b = resumed_model->parameters();
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    CHECK(ops::max_abs_diff(a.entries()[i].tensor, b.entries()[i].tensor) == 0.0f);
  }
  // Saving the resumed state again gives identical bytes.
  CHECK(encode_checkpoint(resumed.snapshot()) == encode_checkpoint(trainer.snapshot()));
}

TEST_CASE("divergence aborts and keeps the last good state") {
  auto cfg = small_run();
  cfg.train.divergence_bpd = 1.0;
  cfg.train.max_steps = 3;
  FlowModel<float> model(cfg.model);
  const auto data = synth_textures(16, 8, 8, 3, 4);
  Trainer<float> trainer(model, data, cfg);
  const auto path = temp_path("diverge.dfck");
  std::filesystem::remove(path + ".last_good");
  CHECK_THROWS_AS(trainer.run({}, path), TrainingError);
  REQUIRE(std::filesystem::exists(path + ".last_good"));
  const auto ck = load_checkpoint(path + ".last_good");
  CHECK(ck.at("trainer.step").values()[0] == 0.0);
  std::filesystem::remove(path + ".last_good");
}

TEST_CASE("loss trends down over the first steps") {
  auto cfg = small_run();
  cfg.train.batch_size = 16;
  FlowModel<float> model(cfg.model);
  const auto data = synth_textures(256, 8, 8, 3, 5);
  Trainer<float> trainer(model, data, cfg);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 60; ++i) {
    const double b = trainer.step().bpd;
    if (i < 20) first += b;
    if (i >= 40) last += b;
  }
  MESSAGE("mean bpd, steps 1-20: " << first / 20 << ", steps 41-60: " << last / 20);
  CHECK(last < first);
}
