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

#include "denseflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "denseflow/ops.hpp"

namespace denseflow {

template <typename T>
void Adamax<T>::step(const std::vector<NamedTensor<T>>& params, double lr) {
  ++t_;
  const double correction = lr / (1.0 - std::pow(beta1_, static_cast<double>(t_)));
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    const auto n = static_cast<std::size_t>(t.numel());
    auto& s = state_[p.name];
    if (s.m.size() != n) {
      s.m.assign(n, T(0));
      s.u.assign(n, T(0));
    }
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi)) throw TrainingError("non-finite gradient in " + p.name);
      const double m = beta1_ * static_cast<double>(s.m[i]) + (1.0 - beta1_) * gi;
      const double u = std::max(beta2_ * static_cast<double>(s.u[i]), std::abs(gi));
      s.m[i] = static_cast<T>(m);
      s.u[i] = static_cast<T>(u);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - correction * m / (u + eps_));
    }
  }
}

template <typename T>
void Adamax<T>::save(Checkpoint& ck) const {
  ck.put_values("adamax.t", {static_cast<double>(t_)});
  for (const auto& [name, s] : state_) {
    const Shape shape{static_cast<std::int64_t>(s.m.size())};
    ck.put("adamax.m." + name, Tensor<T>(shape, s.m));
    ck.put("adamax.u." + name, Tensor<T>(shape, s.u));
  }
}

template <typename T>
void Adamax<T>::load(const Checkpoint& ck, const std::vector<NamedTensor<T>>& params) {
  t_ = static_cast<std::int64_t>(ck.at("adamax.t").values().at(0));
  state_.clear();
  for (const auto& p : params) {
    const auto* m = ck.find("adamax.m." + p.name);
    if (!m) continue;
    const auto mt = m->template tensor<T>(), ut = ck.at("adamax.u." + p.name).template tensor<T>();
    if (mt.numel() != p.tensor.numel()) throw DataError("checkpoint: moment size mismatch for " + p.name);
    state_[p.name] = Moments{{mt.data().begin(), mt.data().end()}, {ut.data().begin(), ut.data().end()}};
  }
}

double lr_at(std::int64_t step, int epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs) return cfg.finetune_lr;
  const double warm =
      cfg.warmup_steps > 0 ? std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.warmup_steps)) : 1.0;
  return cfg.lr * warm * std::pow(cfg.decay, epoch);
}

template <typename T>
double clip_grad_norm(const std::vector<NamedTensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& p : params) {
      Tensor<T> t = p.tensor;
      if (!t.has_grad()) continue;
      for (auto& g : t.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * scale);
    }
  }
  return norm;
}

template <typename T>
Trainer<T>::Trainer(FlowModel<T>& model, const ImageDataset& data, const RunConfig& cfg)
    : model_(model), data_(data), cfg_(cfg), rng_(cfg.train.seed) {
  const auto& t = cfg.train;
  if (!(t.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(t.decay > 0.0 && t.decay <= 1.0)) throw ConfigError("train.decay must be in (0, 1]");
  if (t.warmup_steps < 0) throw ConfigError("train.warmup_steps must be non-negative");
  if (t.batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(t.grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  const auto& m = model.config();
  if (data.count == 0) throw DataError("train: empty dataset");
  if (data.channels != m.channels || data.height != m.height || data.width != m.width) {
    throw DataError("train: dataset images do not match the model input shape");
  }
  cfg_.model = m;
  const auto batch = std::min<std::int64_t>(t.batch_size, data.count);
  per_epoch_ = std::max<std::int64_t>(1, data.count / batch);
  params_ = model.parameters().trainable();
  for (auto& p : params_) p.tensor.set_requires_grad(true);
}

template <typename T>
std::int64_t Trainer<T>::total_steps() const {
  if (cfg_.train.max_steps > 0) return cfg_.train.max_steps;
  return per_epoch_ * (cfg_.train.epochs + cfg_.train.finetune_epochs);
}

template <typename T>
void Trainer<T>::start_epoch() {
  order_.resize(data_.count);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(order_.size()); ++i) order_[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
}

template <typename T>
StepLog Trainer<T>::step() {
  if (batch_in_epoch_ == 0) start_epoch();
  const auto batch = std::min<std::int64_t>(cfg_.train.batch_size, data_.count);
  std::vector<std::int64_t> idx(order_.begin() + batch_in_epoch_ * batch, order_.begin() + (batch_in_epoch_ + 1) * batch);
  std::vector<bool> flips(idx.size(), false);
  if (cfg_.train.flip)
    for (std::size_t i = 0; i < flips.size(); ++i) flips[i] = rng_.uniform() < 0.5;
  const auto px = data_.template batch<T>(idx, flips);

  model_.set_training(true);
  for (auto& p : params_) p.tensor.zero_grad();
  StepLog log;
  log.epoch = epoch_;
  BoundResult<T> r;
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    RngNoise<T> noise(rng_);
    try {
      r = model_.forward(px, noise);
    } catch (const NumericError& e) {
      throw TrainingError(std::string("step ") + std::to_string(step_ + 1) + ": " + e.what());
    }
    const auto loss = ops::mul_scalar(ops::sum(r.bound), static_cast<T>(-1.0 / static_cast<double>(batch)));
    log.bpd = static_cast<double>(loss.item()) / (static_cast<double>(model_.data_dims()) * std::numbers::ln2);
    if (!std::isfinite(log.bpd) || log.bpd > cfg_.train.divergence_bpd) {
      throw TrainingError("step " + std::to_string(step_ + 1) + ": training diverged at " + std::to_string(log.bpd) +
                          " bpd (min |s| of 1x1 convolutions " + std::to_string(model_.min_invconv_scale()) + ")");
    }
    tape.backward(loss);
  }
  log.grad_norm = clip_grad_norm(params_, cfg_.train.grad_clip);
  log.lr = lr_at(step_, epoch_, cfg_.train);
  opt_.step(params_, log.lr);
  ++step_;
  if (++batch_in_epoch_ == per_epoch_) {
    batch_in_epoch_ = 0;
    ++epoch_;
  }
  log.step = step_;
  log.min_invconv = static_cast<double>(model_.min_invconv_scale());
  log.min_coupling_scale = static_cast<double>(r.min_scale);
  return log;
}

template <typename T>
void Trainer<T>::run(const std::function<void(const StepLog&)>& on_step, const std::string& checkpoint_path) {
  const auto total = total_steps();
  while (step_ < total) {
    Checkpoint last_good;
    if (!checkpoint_path.empty()) last_good = snapshot();
    StepLog log;
    try {
      log = step();
    } catch (const TrainingError&) {
      if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path + ".last_good", last_good);
      throw;
    }
    if (on_step) on_step(log);
    const auto every = cfg_.train.checkpoint_every;
    if (!checkpoint_path.empty() && every > 0 && step_ % every == 0) save_checkpoint(checkpoint_path, snapshot());
  }
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, snapshot());
}

template <typename T>
void put_model(Checkpoint& ck, const FlowModel<T>& model) {
  const auto reg = model.parameters();
  for (const auto& e : reg.entries()) ck.put(e.name, e.tensor);
}

namespace {

template <typename T>
void load_model(const Checkpoint& ck, const FlowModel<T>& model) {
  const auto reg = model.parameters();
  for (const auto& e : reg.entries()) {
    const auto src = ck.at(e.name).template tensor<T>();
    if (src.shape() != e.tensor.shape()) throw DataError("checkpoint: shape mismatch for " + e.name);
    Tensor<T> dst = e.tensor;
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
}

}  // namespace

template <typename T>
Checkpoint Trainer<T>::snapshot() const {
  Checkpoint ck;
  put_model(ck, model_);
  opt_.save(ck);
  ck.put_values("trainer.step", {static_cast<double>(step_)});
  ck.put_values("trainer.epoch", {static_cast<double>(epoch_)});
  ck.put_values("trainer.batch_in_epoch", {static_cast<double>(batch_in_epoch_)});
  ck.put_values("trainer.order", std::vector<double>(order_.begin(), order_.end()));
  ck.config = format_config(cfg_);
  ck.rng_state = rng_.state();
  return ck;
}

template <typename T>
void Trainer<T>::restore(const Checkpoint& ck) {
  load_model(ck, model_);
  opt_.load(ck, params_);
  step_ = static_cast<std::int64_t>(ck.at("trainer.step").values().at(0));
  epoch_ = static_cast<int>(ck.at("trainer.epoch").values().at(0));
  batch_in_epoch_ = static_cast<std::int64_t>(ck.at("trainer.batch_in_epoch").values().at(0));
  const auto order = ck.at("trainer.order").values();
  order_.assign(order.begin(), order.end());
  if (batch_in_epoch_ > 0 && static_cast<std::int64_t>(order_.size()) != data_.count) {
    throw DataError("checkpoint: epoch order does not match the dataset size");
  }
  rng_.restore(ck.rng_state);
}

template <typename T>
std::unique_ptr<FlowModel<T>> model_from_checkpoint(const Checkpoint& ck, RunConfig* cfg) {
  const auto run = parse_config(ck.config);
  auto model = std::make_unique<FlowModel<T>>(run.model);
  load_model(ck, *model);
  if (cfg) *cfg = run;
  return model;
}

template class Adamax<float>;
template class Adamax<double>;
template class Trainer<float>;
template class Trainer<double>;
template double clip_grad_norm<float>(const std::vector<NamedTensor<float>>&, double);
template double clip_grad_norm<double>(const std::vector<NamedTensor<double>>&, double);
template std::unique_ptr<FlowModel<float>> model_from_checkpoint<float>(const Checkpoint&, RunConfig*);
template std::unique_ptr<FlowModel<double>> model_from_checkpoint<double>(const Checkpoint&, RunConfig*);
template void put_model<float>(Checkpoint&, const FlowModel<float>&);
template void put_model<double>(Checkpoint&, const FlowModel<double>&);

}  // namespace denseflow
