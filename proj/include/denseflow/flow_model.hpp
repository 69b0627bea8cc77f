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

#ifndef DENSEFLOW_FLOW_MODEL_HPP
#define DENSEFLOW_FLOW_MODEL_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "denseflow/bijections.hpp"
#include "denseflow/config.hpp"
#include "denseflow/cross_unit.hpp"
#include "denseflow/noise.hpp"

namespace denseflow {

struct StagePlan {
  std::string name;
  int channels = 0, height = 0, width = 0;  // tensor leaving the stage
  std::int64_t params = 0;
};

/// Shapes and parameter counts derived from a config without building it.
struct ModelPlan {
  std::vector<StagePlan> stages;
  std::int64_t input_dims = 0;
  std::int64_t noise_dims = 0;
  std::int64_t latent_dims = 0;
  std::int64_t factored_dims = 0;
  std::int64_t params = 0;
  int modules = 0;

  std::string describe() const;
};

/// Throws ConfigError naming the first infeasible stage.
ModelPlan plan_model(const FlowConfig& cfg);

template <typename T>
struct BoundResult {
  Tensor<T> bound;  // [b], nats
  LikelihoodTerms<T> terms;
  T min_scale = T(1);  // smallest coupling scale seen
};

/// Everything needed to invert a forward pass exactly.
template <typename T>
struct LatentRecord {
  Tensor<T> x;                   // dequantised input
  std::vector<Tensor<T>> dropped;  // per squeeze-and-drop, in forward order
  Tensor<T> final;
};

template <typename T>
class FlowModel final : public Module<T> {
 public:
  explicit FlowModel(const FlowConfig& cfg);
  ~FlowModel() override;
  FlowModel(const FlowModel&) = delete;
  FlowModel& operator=(const FlowModel&) = delete;

  /// Single-draw bound for pixels [b, c, h, w] holding integers 0..255.
  BoundResult<T> forward(const Tensor<T>& pixels, NoiseSource<T>& noise, LatentRecord<T>* record = nullptr);
  /// Log-mean-exp of `samples` independent single-draw bounds; no gradients.
  Tensor<T> bound_mc(const Tensor<T>& pixels, int samples, NoiseSource<T>& noise);

  /// Inverts a recorded forward pass back to the dequantised input.
  Tensor<T> decode(const LatentRecord<T>& record) const;
  /// Draws all latents at the given temperature and returns pixels 0..255.
  Tensor<T> sample(int n, T temperature, NoiseSource<T>& noise) const;

  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;
  ParameterRegistry<T> parameters() const;
  void set_training(bool training) override;

  const FlowConfig& config() const { return cfg_; }
  const ModelPlan& plan() const { return plan_; }
  std::int64_t data_dims() const { return plan_.input_dims; }
  // Smallest |diagonal| over all 1x1 convolutions.
  T min_invconv_scale() const;
  // Bijection inverse evaluations and cross-unit conditioner evaluations.
  std::uint64_t inverse_calls() const { return inverse_calls_.load(); }
  std::uint64_t conditioner_calls() const;

 private:
  struct Unit;
  struct Block;

  Tensor<T> invert(Tensor<T> z, const std::function<Tensor<T>(std::size_t, const Tensor<T>&)>& dropped) const;
  void check(const Tensor<T>& t, const std::string& stage) const;

  FlowConfig cfg_;
  ModelPlan plan_;
  std::unique_ptr<Dequantizer<T>> dequant_;
  std::vector<std::unique_ptr<Block>> blocks_;
  std::vector<std::unique_ptr<FactorOut<T>>> factor_;
  mutable std::atomic<std::uint64_t> inverse_calls_{0};
};

}  // namespace denseflow

#endif  // DENSEFLOW_FLOW_MODEL_HPP
