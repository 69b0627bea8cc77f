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

#ifndef DENSEFLOW_CONFIG_HPP
#define DENSEFLOW_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "denseflow/bijections.hpp"
#include "denseflow/coupling.hpp"
#include "denseflow/cross_unit.hpp"

namespace denseflow {

enum class CouplingKind { fusion, glow };

struct FlowConfig {
  std::string name = "custom";
  int channels = 3;
  int height = 8;
  int width = 8;
  bool initial_squeeze = true;
  // Modules per unit, one list per block.
  std::vector<std::vector<int>> blocks{{3, 3}, {3, 3}};
  int growth = 4;
  NoiseMode noise = NoiseMode::learned;
  ContextMode context = ContextMode::inclusive;
  int cross_hidden = 32;
  CouplingKind coupling = CouplingKind::fusion;
  CouplingNetConfig net;
  int glow_hidden = 32;
  DequantMode dequant = DequantMode::uniform;
  int dequant_hidden = 16;
  bool conditional_prior = true;
  std::uint64_t seed = 0;

  int module_count() const;
};

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 1;
  std::int64_t max_steps = 0;  // 0: run all epochs
  std::int64_t warmup_steps = 5000;
  double decay = 0.95;
  double finetune_lr = 2e-5;
  int finetune_epochs = 0;
  double grad_clip = 100.0;
  bool flip = true;
  double divergence_bpd = 30.0;
  int log_every = 10;
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  std::uint64_t seed = 0;
};

struct EvalConfig {
  int mc_samples = 1;
  int chunk = 64;
  std::uint64_t seed = 0;
};

struct RunConfig {
  FlowConfig model;
  TrainConfig train;
  EvalConfig eval;
};

/// Named configurations; throws ConfigError for an unknown name.
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Same block layout and growth rate on a 3 x size x size input with the
/// default (small) coupling widths; used to exercise full-scale layouts
/// quickly.
FlowConfig desk_scaled(FlowConfig cfg, int size = 16);

/// INI-style text: [model], [coupling], [train] and [eval] sections of
/// `key = value` lines, '#' comments. Missing keys keep their defaults; unknown
/// sections or keys are errors.
RunConfig parse_config(const std::string& text, const RunConfig& base = RunConfig{});
std::string format_config(const RunConfig& cfg);

std::string to_string(CouplingKind k);
std::string to_string(NoiseMode m);
std::string to_string(ContextMode m);
std::string to_string(DequantMode m);

}  // namespace denseflow

#endif  // DENSEFLOW_CONFIG_HPP
