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

#include "denseflow/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "denseflow/errors.hpp"

namespace denseflow {

int FlowConfig::module_count() const {
  int n = 0;
  for (const auto& b : blocks) n = std::accumulate(b.begin(), b.end(), n);
  return n;
}

std::string to_string(CouplingKind k) { return k == CouplingKind::fusion ? "fusion" : "glow"; }
std::string to_string(NoiseMode m) { return m == NoiseMode::learned ? "learned" : "white"; }
std::string to_string(ContextMode m) { return m == ContextMode::inclusive ? "inclusive" : "strict"; }
std::string to_string(DequantMode m) { return m == DequantMode::uniform ? "uniform" : "variational"; }

namespace {

RunConfig desk(const std::string& name, CouplingKind coupling, int growth, NoiseMode noise) {
  RunConfig r;
  auto& m = r.model;
  m.name = name;
  m.blocks = {{3, 3}, {3, 3}};
  m.growth = growth;
  m.noise = noise;
  m.coupling = coupling;
  r.train.warmup_steps = 100;
  r.train.decay = 0.99;
  r.train.epochs = 100;
  return r;
}

RunConfig full_scale(const std::string& name, std::vector<std::vector<int>> blocks, int growth) {
  RunConfig r;
  auto& m = r.model;
  m.name = name;
  m.height = m.width = 32;
  m.blocks = std::move(blocks);
  m.growth = growth;
  m.net = CouplingNetConfig{48, 7, 64, 1, 0, 6};
  m.cross_hidden = 128;
  m.dequant = DequantMode::variational;
  m.dequant_hidden = 32;
  r.train.batch_size = 64;
  r.train.epochs = 300;
  r.train.finetune_epochs = 10;
  r.eval.mc_samples = 1000;
  return r;
}

const std::map<std::string, std::function<RunConfig()>>& registry() {
  static const std::map<std::string, std::function<RunConfig()>> presets = {
      {"denseflow-12-4", [] { return desk("denseflow-12-4", CouplingKind::fusion, 4, NoiseMode::learned); }},
      {"ablation-glow-plain", [] { return desk("ablation-glow-plain", CouplingKind::glow, 0, NoiseMode::learned); }},
      {"ablation-glow-white", [] { return desk("ablation-glow-white", CouplingKind::glow, 4, NoiseMode::white); }},
      {"ablation-glow-learned",
       [] { return desk("ablation-glow-learned", CouplingKind::glow, 4, NoiseMode::learned); }},
      {"ablation-fusion-plain",
       [] { return desk("ablation-fusion-plain", CouplingKind::fusion, 0, NoiseMode::learned); }},
      {"ablation-fusion-white",
       [] { return desk("ablation-fusion-white", CouplingKind::fusion, 4, NoiseMode::white); }},
      {"ablation-fusion-learned",
       [] { return desk("ablation-fusion-learned", CouplingKind::fusion, 4, NoiseMode::learned); }},
      {"denseflow-74-10",
       [] { return full_scale("denseflow-74-10", {std::vector<int>(6, 5), std::vector<int>(4, 6), {20}}, 10); }},
      {"denseflow-45-6",
       [] { return full_scale("denseflow-45-6", {std::vector<int>(5, 3), std::vector<int>(3, 5), {15}}, 6); }},
      {"glow-45",
       [] {
         auto r = full_scale("glow-45", {{15}, {15}, {15}}, 0);
         r.model.coupling = CouplingKind::glow;
         r.model.glow_hidden = 512;
         return r;
       }},
  };
  return presets;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: expected true or false for " + key);
}

std::vector<std::vector<int>> parse_blocks(const std::string& v) {
  std::vector<std::vector<int>> blocks;
  std::stringstream bs(v);
  std::string block;
  while (std::getline(bs, block, ';')) {
    std::vector<int> units;
    std::stringstream us(block);
    std::string unit;
    while (std::getline(us, unit, ',')) units.push_back(parse_number<int>("model.blocks", trim(unit)));
    blocks.push_back(std::move(units));
  }
  return blocks;
}

std::string format_blocks(const std::vector<std::vector<int>>& blocks) {
  std::string s;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (b) s += ';';
    for (std::size_t u = 0; u < blocks[b].size(); ++u) s += (u ? "," : "") + std::to_string(blocks[b][u]);
  }
  return s;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// One binding per key: a reader and a writer over the same field.
struct Binding {
  std::function<void(const std::string&)> read;
  std::function<std::string()> write;
};

using Section = std::vector<std::pair<std::string, Binding>>;

template <typename N>
Binding num(const std::string& key, N& field) {
  return {[&field, key](const std::string& v) { field = parse_number<N>(key, v); },
          [&field] {
            if constexpr (std::is_floating_point_v<N>) {
              return format_double(field);
            } else {
              return std::to_string(field);
            }
          }};
}

Binding flag(const std::string& key, bool& field) {
  return {[&field, key](const std::string& v) { field = parse_bool(key, v); },
          [&field] { return std::string(field ? "true" : "false"); }};
}

template <typename E>
Binding choice(const std::string& key, E& field, std::initializer_list<E> options) {
  std::vector<E> opts(options);
  return {[&field, key, opts](const std::string& v) {
            for (E e : opts)
              if (to_string(e) == v) {
                field = e;
                return;
              }
            throw ConfigError("config: unknown value '" + v + "' for " + key);
          },
          [&field] { return to_string(field); }};
}

std::vector<std::pair<std::string, Section>> bindings(RunConfig& c) {
  auto& m = c.model;
  auto& n = c.model.net;
  auto& t = c.train;
  auto& e = c.eval;
  Section model{
      {"name", {[&m](const std::string& v) { m.name = v; }, [&m] { return m.name; }}},
      {"channels", num("model.channels", m.channels)},
      {"height", num("model.height", m.height)},
      {"width", num("model.width", m.width)},
      {"initial_squeeze", flag("model.initial_squeeze", m.initial_squeeze)},
      {"blocks", {[&m](const std::string& v) { m.blocks = parse_blocks(v); }, [&m] { return format_blocks(m.blocks); }}},
      {"growth", num("model.growth", m.growth)},
      {"noise", choice("model.noise", m.noise, {NoiseMode::learned, NoiseMode::white})},
      {"context", choice("model.context", m.context, {ContextMode::inclusive, ContextMode::strict})},
      {"cross_hidden", num("model.cross_hidden", m.cross_hidden)},
      {"coupling", choice("model.coupling", m.coupling, {CouplingKind::fusion, CouplingKind::glow})},
      {"glow_hidden", num("model.glow_hidden", m.glow_hidden)},
      {"dequant", choice("model.dequant", m.dequant, {DequantMode::uniform, DequantMode::variational})},
      {"dequant_hidden", num("model.dequant_hidden", m.dequant_hidden)},
      {"conditional_prior", flag("model.conditional_prior", m.conditional_prior)},
      {"seed", num("model.seed", m.seed)},
  };
  Section coupling{
      {"proj_channels", num("coupling.proj_channels", n.proj_channels)},
      {"dense_layers", num("coupling.dense_layers", n.dense_layers)},
      {"dense_growth", num("coupling.dense_growth", n.dense_growth)},
      {"attn_heads", num("coupling.attn_heads", n.attn_heads)},
      {"attn_landmarks", num("coupling.attn_landmarks", n.attn_landmarks)},
      {"newton_iters", num("coupling.newton_iters", n.newton_iters)},
  };
  Section train{
      {"lr", num("train.lr", t.lr)},
      {"batch_size", num("train.batch_size", t.batch_size)},
      {"epochs", num("train.epochs", t.epochs)},
      {"max_steps", num("train.max_steps", t.max_steps)},
      {"warmup_steps", num("train.warmup_steps", t.warmup_steps)},
      {"decay", num("train.decay", t.decay)},
      {"finetune_lr", num("train.finetune_lr", t.finetune_lr)},
      {"finetune_epochs", num("train.finetune_epochs", t.finetune_epochs)},
      {"grad_clip", num("train.grad_clip", t.grad_clip)},
      {"flip", flag("train.flip", t.flip)},
      {"divergence_bpd", num("train.divergence_bpd", t.divergence_bpd)},
      {"log_every", num("train.log_every", t.log_every)},
      {"checkpoint_every", num("train.checkpoint_every", t.checkpoint_every)},
      {"seed", num("train.seed", t.seed)},
  };
  Section eval{
      {"mc_samples", num("eval.mc_samples", e.mc_samples)},
      {"chunk", num("eval.chunk", e.chunk)},
      {"seed", num("eval.seed", e.seed)},
  };
  return {{"model", model}, {"coupling", coupling}, {"train", train}, {"eval", eval}};
}

}  // namespace

RunConfig preset(const std::string& name) {
  const auto& reg = registry();
  const auto it = reg.find(name);
  if (it == reg.end()) throw ConfigError("unknown preset '" + name + "'");
  return it->second();
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : registry()) names.push_back(k);
  return names;
}

FlowConfig desk_scaled(FlowConfig cfg, int size) {
  cfg.height = cfg.width = size;
  cfg.net = CouplingNetConfig{};
  cfg.cross_hidden = 16;
  cfg.glow_hidden = 16;
  cfg.dequant_hidden = 8;
  return cfg;
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  RunConfig cfg = base;
  const auto secs = bindings(cfg);
  const Section* current = nullptr;
  std::string current_name;
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      current_name = trim(line.substr(1, line.size() - 2));
      current = nullptr;
      for (const auto& [name, sec] : secs)
        if (name == current_name) current = &sec;
      if (!current) throw ConfigError(where + "unknown section [" + current_name + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (!current) throw ConfigError(where + "key outside a section");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const Binding* b = nullptr;
    for (const auto& [k, bind] : *current)
      if (k == key) b = &bind;
    if (!b) throw ConfigError(where + "unknown key " + current_name + "." + key);
    try {
      b->read(value);
    } catch (const ConfigError& err) {
      throw ConfigError(where + err.what());
    }
  }
  return cfg;
}

std::string format_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out;
  for (const auto& [name, sec] : bindings(copy)) {
    out += (out.empty() ? "[" : "\n[") + name + "]\n";
    for (const auto& [key, b] : sec) out += key + " = " + b.write() + "\n";
  }
  return out;
}

}  // namespace denseflow
