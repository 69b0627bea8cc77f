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

#include "denseflow/flow_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "denseflow/coupling.hpp"
#include "denseflow/ops.hpp"

namespace denseflow {

namespace {

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k) { return in * out * k * k + out; }

std::int64_t fusion_params(int in, int out, int h, int w, const CouplingNetConfig& n) {
  const std::int64_t p = n.proj_channels, g = n.dense_growth;
  std::int64_t total = conv_params(in, p, 1);
  for (int k = 0; k < n.dense_layers; ++k) total += 2 * (p + k * g) + conv_params(p + k * g, g, 3);
  total += p * h * w + 4 * conv_params(p, p, 1);
  const std::int64_t blend = 2 * p + n.dense_layers * g;
  return total + 2 * blend + conv_params(blend, 2 * out, 3);
}

std::int64_t glow_params(int in, int out, int hidden) {
  return conv_params(in, hidden, 3) + conv_params(hidden, hidden, 1) + conv_params(hidden, 2 * out, 3);
}

std::int64_t dequant_params(int c, int hidden) {
  const int c1 = (c + 1) / 2;
  std::int64_t total = 0;
  const int spans[2][2] = {{c - c1, c1}, {c1, c - c1}};  // (trans, cond)
  for (const auto& s : spans) {
    const int trans = s[0] == 0 ? c : s[0];
    const int cond = s[0] == 0 ? 0 : s[1];
    total += conv_params(c + cond, hidden, 3) + conv_params(hidden, 2 * trans, 3);
  }
  return total;
}

std::string shape_text(const StagePlan& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

}  // namespace

ModelPlan plan_model(const FlowConfig& cfg) {
  ModelPlan plan;
  auto fail = [](const std::string& stage, const std::string& why) {
    throw ConfigError("stage " + stage + ": " + why);
  };
  if (cfg.channels < 1 || cfg.height < 1 || cfg.width < 1) fail("input", "image extents must be positive");
  if (cfg.blocks.empty()) fail("input", "at least one block is required");
  if (cfg.growth < 0) fail("input", "growth rate must be non-negative");
  int c = cfg.channels, h = cfg.height, w = cfg.width;
  plan.input_dims = static_cast<std::int64_t>(c) * h * w;
  auto push = [&](const std::string& name, std::int64_t params) {
    plan.stages.push_back({name, c, h, w, params});
    plan.params += params;
  };
  auto squeeze = [&](const std::string& stage) {
    if (h % 2 || w % 2) fail(stage, "spatial extents " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by 2");
    c *= 4;
    h /= 2;
    w /= 2;
  };
  push("dequantize", cfg.dequant == DequantMode::variational ? dequant_params(c, cfg.dequant_hidden) : 0);
  if (cfg.initial_squeeze) {
    squeeze("squeeze");
    push("squeeze", 0);
  }
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto& units = cfg.blocks[b];
    const std::string bname = "block" + std::to_string(b);
    if (units.empty()) fail(bname, "a block needs at least one unit");
    std::vector<int> context{c};  // channel counts of z_0, z_1, ...
    for (std::size_t u = 0; u < units.size(); ++u) {
      const std::string uname = bname + ".unit" + std::to_string(u);
      if (units[u] < 1) fail(uname, "modules per unit must be at least 1");
      for (int m = 0; m < units[u]; ++m) {
        const std::string mname = uname + ".module" + std::to_string(m);
        if (c < 2) fail(mname, "coupling needs at least 2 channels, got " + std::to_string(c));
        const bool reverse = plan.modules % 2 == 1;
        const auto [cond, trans] = AffineCoupling<float>::parts(c, reverse);
        std::int64_t params = 2 * c + 2 * static_cast<std::int64_t>(c) * c + c;
        if (cfg.coupling == CouplingKind::fusion) {
          const auto& n = cfg.net;
          if (n.attn_heads < 1 || n.proj_channels % n.attn_heads) fail(mname, "projection width not divisible by heads");
          try {
            resolve_landmarks(n.attn_landmarks, static_cast<std::int64_t>(h) * w);
          } catch (const ConfigError& e) {
            fail(mname, e.what());
          }
          params += fusion_params(cond, trans, h, w, n);
        } else {
          params += glow_params(cond, trans, cfg.glow_hidden);
        }
        ++plan.modules;
        push(mname, params);
      }
      if (u + 1 < units.size() && cfg.growth > 0) {
        int ctx = 0;
        for (int cc : context) ctx += cc;
        if (cfg.context == ContextMode::inclusive) ctx += c;
        context.push_back(c);
        const std::int64_t params = cfg.noise == NoiseMode::learned
                                        ? conv_params(ctx, cfg.cross_hidden, 1) + conv_params(cfg.cross_hidden, 2 * cfg.growth, 3)
                                        : 0;
        plan.noise_dims += static_cast<std::int64_t>(cfg.growth) * h * w;
        c += cfg.growth;
        push(uname + ".cross", params);
      } else {
        context.push_back(c);
      }
    }
    if (b + 1 < cfg.blocks.size()) {
      squeeze(bname + ".drop");
      c /= 2;
      plan.factored_dims += static_cast<std::int64_t>(c) * h * w;
      push(bname + ".drop", cfg.conditional_prior ? conv_params(c, 2 * c, 3) : 0);
    }
  }
  plan.latent_dims = static_cast<std::int64_t>(c) * h * w;
  return plan;
}

std::string ModelPlan::describe() const {
  std::ostringstream os;
  for (const auto& s : stages) os << s.name << " " << shape_text(s) << " params " << s.params << "\n";
  os << "modules " << modules << "\n";
  os << "parameters " << params << "\n";
  os << "dims input " << input_dims << " noise " << noise_dims << " latent " << latent_dims << " factored "
     << factored_dims << "\n";
  return os.str();
}

template <typename T>
struct FlowModel<T>::Unit {
  std::vector<std::unique_ptr<Chain<T>>> modules;
  std::unique_ptr<CrossUnitCoupling<T>> cross;
};

template <typename T>
struct FlowModel<T>::Block {
  std::vector<Unit> units;
};

template <typename T>
FlowModel<T>::FlowModel(const FlowConfig& cfg) : cfg_(cfg), plan_(plan_model(cfg)) {
  Rng rng(cfg.seed);
  dequant_ = std::make_unique<Dequantizer<T>>(cfg.channels, cfg.dequant, cfg.dequant_hidden, rng);
  int c = cfg.channels, h = cfg.height, w = cfg.width;
  if (cfg.initial_squeeze) {
    c *= 4;
    h /= 2;
    w /= 2;
  }
  int module_index = 0;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    auto block = std::make_unique<Block>();
    int ctx = c;
    for (std::size_t u = 0; u < cfg.blocks[b].size(); ++u) {
      Unit unit;
      for (int m = 0; m < cfg.blocks[b][u]; ++m, ++module_index) {
        const bool reverse = module_index % 2 == 1;
        const auto [cond, trans] = AffineCoupling<T>::parts(c, reverse);
        std::unique_ptr<CouplingNet<T>> net;
        if (cfg.coupling == CouplingKind::fusion) {
          net = std::make_unique<FusionCouplingNet<T>>(cond, trans, h, w, cfg.net, rng);
        } else {
          net = std::make_unique<GlowCouplingNet<T>>(cond, trans, cfg.glow_hidden, rng);
        }
        auto chain = std::make_unique<Chain<T>>();
        chain->push(std::make_unique<ActNorm<T>>(c));
        chain->push(std::make_unique<InvConv1x1<T>>(c, rng));
        chain->push(std::make_unique<AffineCoupling<T>>(c, std::move(net), reverse));
        unit.modules.push_back(std::move(chain));
      }
      if (u + 1 < cfg.blocks[b].size() && cfg.growth > 0) {
        const int context = ctx + (cfg.context == ContextMode::inclusive ? c : 0);
        unit.cross = std::make_unique<CrossUnitCoupling<T>>(cfg.growth, context, cfg.cross_hidden, cfg.noise, rng);
        ctx += c;
        c += cfg.growth;
      } else {
        ctx += c;
      }
      block->units.push_back(std::move(unit));
    }
    blocks_.push_back(std::move(block));
    if (b + 1 < cfg.blocks.size()) {
      c *= 4;
      h /= 2;
      w /= 2;
      factor_.push_back(std::make_unique<FactorOut<T>>(c, cfg.conditional_prior, rng));
      c /= 2;
    }
  }
}

template <typename T>
FlowModel<T>::~FlowModel() = default;

template <typename T>
void FlowModel<T>::check(const Tensor<T>& t, const std::string& stage) const {
  if (ops::all_finite(t)) return;
  std::ostringstream os;
  os << "non-finite values after " << stage << " (min |s| of 1x1 convolutions " << min_invconv_scale() << ")";
  throw NumericError(os.str());
}

template <typename T>
BoundResult<T> FlowModel<T>::forward(const Tensor<T>& pixels, NoiseSource<T>& noise, LatentRecord<T>* record) {
  if (pixels.rank() != 4 || pixels.dim(1) != cfg_.channels || pixels.dim(2) != cfg_.height ||
      pixels.dim(3) != cfg_.width) {
    throw ShapeError("model: expected pixels of shape [b, " + std::to_string(cfg_.channels) + ", " +
                     std::to_string(cfg_.height) + ", " + std::to_string(cfg_.width) + "]");
  }
  const auto batch = pixels.dim(0);
  BoundResult<T> out;
  out.terms = LikelihoodTerms<T>::zeros(batch);
  auto& terms = out.terms;
  out.min_scale = std::numeric_limits<T>::infinity();

  const auto dq = dequant_->forward(pixels, noise);
  terms.dequant = ops::sub(dq.correction, dq.penalty);
  Tensor<T> x = dq.x;
  check(x, "dequantize");
  check(terms.dequant, "dequantize");
  if (record) {
    record->x = x.detach();
    record->dropped.clear();
  }
  if (cfg_.initial_squeeze) x = ops::space_to_channel(x);

  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string bname = "block" + std::to_string(b);
    std::vector<Tensor<T>> context{x};
    auto& units = blocks_[b]->units;
    for (std::size_t u = 0; u < units.size(); ++u) {
      const std::string uname = bname + ".unit" + std::to_string(u);
      for (std::size_t m = 0; m < units[u].modules.size(); ++m) {
        auto step = units[u].modules[m]->forward(x);
        x = step.y;
        terms.logdet_sum = ops::add(terms.logdet_sum, step.logdet);
        out.min_scale = std::min(out.min_scale, step.min_scale);
        check(x, uname + ".module" + std::to_string(m));
        check(step.logdet, uname + ".module" + std::to_string(m));
      }
      if (!units[u].cross) continue;
      std::vector<Tensor<T>> ctx = context;
      if (cfg_.context == ContextMode::inclusive) ctx.push_back(x);
      auto aug = units[u].cross->augment(x, ctx, noise);
      context.push_back(x);
      x = aug.z_aug;
      terms.logdet_sum = ops::add(terms.logdet_sum, aug.log_sigma_sum);
      terms.noise_penalty = ops::add(terms.noise_penalty, aug.noise_penalty);
      check(x, uname + ".cross");
    }
    if (b < factor_.size()) {
      auto fo = factor_[b]->forward(ops::space_to_channel(x));
      terms.prior_logprob = ops::add(terms.prior_logprob, fo.logprob);
      check(fo.logprob, bname + ".drop");
      if (record) record->dropped.push_back(fo.dropped.detach());
      x = fo.retained;
    }
  }
  const T half_log_2pi = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi));
  const auto per_dim = ops::add_scalar(ops::mul_scalar(ops::square(x), T(-0.5)), -half_log_2pi);
  terms.prior_logprob = ops::add(terms.prior_logprob, ops::sum_per_example(per_dim));
  if (record) record->final = x.detach();
  out.bound = terms.total();
  check(out.bound, "prior");
  return out;
}

template <typename T>
Tensor<T> FlowModel<T>::bound_mc(const Tensor<T>& pixels, int samples, NoiseSource<T>& noise) {
  if (samples < 1) throw ConfigError("mc samples must be at least 1");
  NoGradScope<T> guard;
  const auto b = pixels.dim(0);
  std::vector<std::vector<double>> draws(static_cast<std::size_t>(b));
  for (int s = 0; s < samples; ++s) {
    const auto r = forward(pixels, noise).bound;
    for (std::int64_t i = 0; i < b; ++i) draws[static_cast<std::size_t>(i)].push_back(static_cast<double>(r[i]));
  }
  std::vector<T> out;
  for (const auto& d : draws) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : d) mx = std::max(mx, v);
    double acc = 0.0;
    for (double v : d) acc += std::exp(v - mx);
    out.push_back(static_cast<T>(mx + std::log(acc / static_cast<double>(d.size()))));
  }
  return Tensor<T>(Shape{b}, std::move(out));
}

template <typename T>
Tensor<T> FlowModel<T>::invert(Tensor<T> z,
                               const std::function<Tensor<T>(std::size_t, const Tensor<T>&)>& dropped) const {
  for (std::size_t bi = blocks_.size(); bi-- > 0;) {
    if (bi < factor_.size()) z = ops::channel_to_space(factor_[bi]->inverse(z, dropped(bi, z)));
    const auto& units = blocks_[bi]->units;
    for (std::size_t u = units.size(); u-- > 0;) {
      if (units[u].cross) z = CrossUnitCoupling<T>::strip(z, cfg_.growth);
      for (std::size_t m = units[u].modules.size(); m-- > 0;) {
        z = units[u].modules[m]->inverse(z);
        ++inverse_calls_;
      }
    }
  }
  if (cfg_.initial_squeeze) z = ops::channel_to_space(z);
  return z;
}

template <typename T>
Tensor<T> FlowModel<T>::decode(const LatentRecord<T>& record) const {
  NoGradScope<T> guard;
  if (record.dropped.size() != factor_.size()) throw ContractError("decode: dropped latent count mismatch");
  return invert(record.final, [&](std::size_t b, const Tensor<T>&) { return record.dropped[b]; });
}

template <typename T>
Tensor<T> FlowModel<T>::sample(int n, T temperature, NoiseSource<T>& noise) const {
  if (n < 1) throw ConfigError("sample: count must be positive");
  if (!(temperature >= T(0))) throw ConfigError("sample: temperature must be non-negative");
  NoGradScope<T> guard;
  const auto& last = plan_.stages.back();
  auto z = ops::mul_scalar(noise.normal(Shape{n, last.channels, last.height, last.width}), temperature);
  auto x = invert(z, [&](std::size_t b, const Tensor<T>& retained) {
    return factor_[b]->sample_dropped(retained, temperature, noise);
  });
  check(x, "sample");
  return Dequantizer<T>::quantize(x);
}

template <typename T>
void FlowModel<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  const std::string p = prefix.empty() ? "" : prefix + ".";
  dequant_->collect(p + "dequant", registry);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& units = blocks_[b]->units;
    for (std::size_t u = 0; u < units.size(); ++u) {
      const std::string uname = p + "block" + std::to_string(b) + ".unit" + std::to_string(u);
      for (std::size_t m = 0; m < units[u].modules.size(); ++m) {
        units[u].modules[m]->collect(uname + ".module" + std::to_string(m), registry);
      }
      if (units[u].cross) units[u].cross->collect(uname + ".cross", registry);
    }
    if (b < factor_.size()) factor_[b]->collect(p + "block" + std::to_string(b) + ".drop", registry);
  }
}

template <typename T>
ParameterRegistry<T> FlowModel<T>::parameters() const {
  ParameterRegistry<T> reg;
  collect("", reg);
  return reg;
}

template <typename T>
void FlowModel<T>::set_training(bool training) {
  dequant_->set_training(training);
  for (auto& block : blocks_)
    for (auto& unit : block->units)
      for (auto& m : unit.modules) m->set_training(training);
}

template <typename T>
T FlowModel<T>::min_invconv_scale() const {
  T best = std::numeric_limits<T>::infinity();
  for (const auto& block : blocks_)
    for (const auto& unit : block->units)
      for (const auto& m : unit.modules) {
        best = std::min(best, static_cast<const InvConv1x1<T>&>(m->at(1)).min_abs_s());
      }
  return best;
}

template <typename T>
std::uint64_t FlowModel<T>::conditioner_calls() const {
  std::uint64_t n = 0;
  for (const auto& block : blocks_)
    for (const auto& unit : block->units)
      if (unit.cross) n += unit.cross->conditioner_calls();
  return n;
}

template class FlowModel<float>;
template class FlowModel<double>;

}  // namespace denseflow
