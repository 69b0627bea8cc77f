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

#ifndef DENSEFLOW_ESTIMATOR_HPP
#define DENSEFLOW_ESTIMATOR_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "denseflow/config.hpp"
#include "denseflow/data.hpp"
#include "denseflow/flow_model.hpp"

namespace denseflow {

double bits_per_dim(double bound_nats, std::int64_t dims);

/// Max-shifted log(mean(exp(v))).
double log_mean_exp(const std::vector<double>& v);

struct EvalReport {
  std::int64_t examples = 0;
  std::int64_t dims = 0;
  int mc_samples = 1;
  double bpd_mean = 0.0;
  double bpd_std_error = 0.0;
  double bpd_k1_mean = 0.0;  // first draw only
  // Shares of the first-draw bpd; they sum to bpd_k1_mean.
  double logdet_bpd = 0.0;
  double noise_bpd = 0.0;
  double prior_bpd = 0.0;
  double dequant_bpd = 0.0;
  std::vector<double> bpd;  // per example, K-sample

  std::string to_text() const;
  std::string to_json() const;
};

/// Single-draw bound of a pixel batch, as produced by FlowModel::forward.
template <typename T>
using BoundFn = std::function<BoundResult<T>(const Tensor<T>& pixels, NoiseSource<T>& noise)>;

/// Evaluates chunks of `cfg.chunk` images; chunk i draws from an rng forked
/// from (cfg.seed, i), so results do not depend on the worker count.
/// `threads` 0 reads DENSEFLOW_THREADS (default 1).
template <typename T>
EvalReport evaluate(const BoundFn<T>& bound, const ImageDataset& data, const EvalConfig& cfg, int threads = 0);

/// Runs the model in evaluation mode.
template <typename T>
EvalReport evaluate(FlowModel<T>& model, const ImageDataset& data, const EvalConfig& cfg, int threads = 0);

/// Worker count from DENSEFLOW_THREADS, at least 1.
int thread_count();

}  // namespace denseflow

#endif  // DENSEFLOW_ESTIMATOR_HPP
