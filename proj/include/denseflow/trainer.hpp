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

#ifndef DENSEFLOW_TRAINER_HPP
#define DENSEFLOW_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "denseflow/checkpoint.hpp"
#include "denseflow/config.hpp"
#include "denseflow/data.hpp"
#include "denseflow/flow_model.hpp"

namespace denseflow {

/// m <- b1 m + (1 - b1) g; u <- max(b2 u, |g|); p <- p - lr / (1 - b1^t) * m / (u + eps).
template <typename T>
class Adamax {
 public:
  explicit Adamax(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Uses each tensor's gradient; throws TrainingError on a non-finite one.
  void step(const std::vector<NamedTensor<T>>& params, double lr);
  std::int64_t steps() const { return t_; }

  void save(Checkpoint& ck) const;
  void load(const Checkpoint& ck, const std::vector<NamedTensor<T>>& params);

 private:
  struct Moments {
    std::vector<T> m, u;
  };
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

/// base * min(1, step / warmup) * decay^epoch, or the constant fine-tune rate
/// once `epoch` reaches cfg.epochs.
double lr_at(std::int64_t step, int epoch, const TrainConfig& cfg);

/// Scales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<NamedTensor<T>>& params, double max_norm);

struct StepLog {
  std::int64_t step = 0;  // completed updates, starting at 1
  int epoch = 0;
  double lr = 0.0;
  double bpd = 0.0;        // single-sample training bpd of the batch
  double grad_norm = 0.0;  // before clipping
  double min_invconv = 0.0;
  double min_coupling_scale = 0.0;
};

template <typename T>
class Trainer {
 public:
  Trainer(FlowModel<T>& model, const ImageDataset& data, const RunConfig& cfg);

  /// Runs until max_steps or all epochs. When `checkpoint_path` is set, saves
  /// every cfg.train.checkpoint_every steps and at the end; on divergence the
  /// pre-step state goes to `<checkpoint_path>.last_good` before a
  /// TrainingError is thrown.
  void run(const std::function<void(const StepLog&)>& on_step = {}, const std::string& checkpoint_path = "");
  /// One update; returns its log line.
  StepLog step();

  Checkpoint snapshot() const;
  void restore(const Checkpoint& ck);

  std::int64_t steps_done() const { return step_; }
  int epoch() const { return epoch_; }
  std::int64_t steps_per_epoch() const { return per_epoch_; }
  std::int64_t total_steps() const;

 private:
  void start_epoch();

  FlowModel<T>& model_;
  const ImageDataset& data_;
  RunConfig cfg_;
  Adamax<T> opt_;
  Rng rng_;
  std::vector<NamedTensor<T>> params_;
  std::vector<std::int64_t> order_;
  std::int64_t per_epoch_ = 1;
  std::int64_t step_ = 0;
  int epoch_ = 0;
  std::int64_t batch_in_epoch_ = 0;
};

/// Builds the model described by the checkpoint's config and loads its
/// parameters and buffers.
template <typename T>
std::unique_ptr<FlowModel<T>> model_from_checkpoint(const Checkpoint& ck, RunConfig* cfg = nullptr);

/// Writes every registry entry of the model as a record.
template <typename T>
void put_model(Checkpoint& ck, const FlowModel<T>& model);

}  // namespace denseflow

#endif  // DENSEFLOW_TRAINER_HPP
