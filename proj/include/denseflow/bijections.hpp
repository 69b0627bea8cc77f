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

#ifndef DENSEFLOW_BIJECTIONS_HPP
#define DENSEFLOW_BIJECTIONS_HPP

#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "denseflow/nn.hpp"
#include "denseflow/noise.hpp"
#include "denseflow/random.hpp"
#include "denseflow/tensor.hpp"

namespace denseflow {

/// Output of a forward pass. `logdet` has shape [b] and is in nats.
template <typename T>
struct FlowStep {
  Tensor<T> y;
  Tensor<T> logdet;
  T min_scale = std::numeric_limits<T>::infinity();  // smallest coupling scale seen
};

template <typename T>
class Bijection : public Module<T> {
 public:
  // Non-const: ActNorm initialises itself from its first forward batch.
  virtual FlowStep<T> forward(const Tensor<T>& x) = 0;
  virtual Tensor<T> inverse(const Tensor<T>& y) const = 0;
  virtual std::string kind() const = 0;
};

/// Per-example bound components, each of shape [b].
template <typename T>
struct LikelihoodTerms {
  Tensor<T> logdet_sum;
  Tensor<T> noise_penalty;  // -ln p*(e) of every augmentation draw
  Tensor<T> prior_logprob;
  Tensor<T> dequant;        // scaling correction minus ln q(u|x)

  static LikelihoodTerms zeros(std::int64_t batch);
  Tensor<T> total() const;  // sum of the four components
};

template <typename T>
class ActNorm final : public Bijection<T> {
 public:
  explicit ActNorm(int channels);

  FlowStep<T> forward(const Tensor<T>& x) override;
  Tensor<T> inverse(const Tensor<T>& y) const override;
  std::string kind() const override { return "actnorm"; }
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;

  bool initialized() const { return flag_[0] != T(0); }
  void set(const std::vector<T>& scale, const std::vector<T>& bias);
  const Tensor<T>& scale() const { return scale_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  void initialize(const Tensor<T>& x);
  Tensor<T> scale_;  // [1, c, 1, 1]
  Tensor<T> bias_;
  Tensor<T> flag_;   // [1], nonzero once initialised
};

/// 1x1 convolution with W = P L (U + diag(sign * exp(log_s))).
template <typename T>
class InvConv1x1 final : public Bijection<T> {
 public:
  // Random orthogonal initialisation.
  InvConv1x1(int channels, Rng& rng);
  // Explicit factors; `lower` and `upper` are c*c row-major, only the strict
  // triangles are read.
  InvConv1x1(std::vector<int> perm, const std::vector<T>& lower, const std::vector<T>& upper,
             const std::vector<T>& sign, const std::vector<T>& log_s);

  FlowStep<T> forward(const Tensor<T>& x) override;
  Tensor<T> inverse(const Tensor<T>& y) const override;
  std::string kind() const override { return "invconv"; }
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;

  Tensor<T> weight() const;          // differentiable [c, c]
  Tensor<T> inverse_weight() const;  // from the triangular factors
  T min_abs_s() const;
  int channels() const { return c_; }

 private:
  void build_constants();
  int c_ = 0;
  Tensor<T> perm_;  // buffer, perm_[i] = source row of output row i
  Tensor<T> lower_;
  Tensor<T> upper_;
  Tensor<T> sign_;  // buffer
  Tensor<T> log_s_;
  Tensor<T> pmat_;
  Tensor<T> lower_mask_;
  Tensor<T> upper_mask_;
  Tensor<T> eye_;
};

/// Conditioner of an affine coupling: maps the conditioning half to (s_raw, t).
template <typename T>
class CouplingNet : public Module<T> {
 public:
  virtual std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& x) const = 0;
};

/// y1 = x1, y2 = s * x2 + t with s = sigmoid(s_raw + 2). Channels split at
/// ceil(c/2); the first part conditions unless `reverse` swaps the roles.
template <typename T>
class AffineCoupling final : public Bijection<T> {
 public:
  AffineCoupling(int channels, std::unique_ptr<CouplingNet<T>> net, bool reverse = false);

  FlowStep<T> forward(const Tensor<T>& x) override;
  Tensor<T> inverse(const Tensor<T>& y) const override;
  std::string kind() const override { return "coupling"; }
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;
  void set_training(bool training) override { net_->set_training(training); }

  static int split_point(int channels) { return (channels + 1) / 2; }
  // Channel counts of the conditioning and transformed parts.
  static std::pair<int, int> parts(int channels, bool reverse);
  CouplingNet<T>& net() { return *net_; }
  bool reverse() const { return reverse_; }

 private:
  int c_;
  int c1_;
  bool reverse_;
  std::unique_ptr<CouplingNet<T>> net_;
};

template <typename T>
class Squeeze final : public Bijection<T> {
 public:
  FlowStep<T> forward(const Tensor<T>& x) override;
  Tensor<T> inverse(const Tensor<T>& y) const override;
  std::string kind() const override { return "squeeze"; }
  void collect(const std::string&, ParameterRegistry<T>&) const override {}
};

/// Sequential composition; logdets accumulate.
template <typename T>
class Chain final : public Bijection<T> {
 public:
  Chain() = default;
  void push(std::unique_ptr<Bijection<T>> b) { members_.push_back(std::move(b)); }
  FlowStep<T> forward(const Tensor<T>& x) override;
  Tensor<T> inverse(const Tensor<T>& y) const override;
  std::string kind() const override { return "chain"; }
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;
  void set_training(bool training) override;
  std::size_t size() const { return members_.size(); }
  Bijection<T>& at(std::size_t i) { return *members_.at(i); }
  const Bijection<T>& at(std::size_t i) const { return *members_.at(i); }

 private:
  std::vector<std::unique_ptr<Bijection<T>>> members_;
};

template <typename T>
struct FactorOutResult {
  Tensor<T> retained;
  Tensor<T> dropped;
  Tensor<T> logprob;  // [b]
};

/// Drops the second half of the channels and scores it under a diagonal
/// Gaussian conditioned on the retained half.
template <typename T>
class FactorOut final : public Module<T> {
 public:
  FactorOut(int channels, bool conditional, Rng& rng);

  FactorOutResult<T> forward(const Tensor<T>& x) const;
  Tensor<T> inverse(const Tensor<T>& retained, const Tensor<T>& dropped) const;
  Tensor<T> sample_dropped(const Tensor<T>& retained, T temperature, NoiseSource<T>& noise) const;
  // (mean, log_std) of the dropped half.
  std::pair<Tensor<T>, Tensor<T>> prior(const Tensor<T>& retained) const;
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;

  bool conditional() const { return conditional_; }
  int retained_channels() const { return half_; }

 private:
  int half_;
  bool conditional_;
  Conv2d<T> net_;
};

enum class DequantMode { uniform, variational };

template <typename T>
struct DequantResult {
  Tensor<T> x;           // continuous data in [0, 1)
  Tensor<T> correction;  // [b], -d ln 256
  Tensor<T> penalty;     // [b], ln q(u | x); zero in uniform mode
};

/// Lifts 8-bit pixels to [0, 1). Variational mode draws u = sigmoid(v) with v
/// from a two-layer conditional affine flow over standard normal noise.
template <typename T>
class Dequantizer final : public Module<T> {
 public:
  Dequantizer(int channels, DequantMode mode, int hidden, Rng& rng);

  // `pixels` holds integer values 0..255 as T.
  DequantResult<T> forward(const Tensor<T>& pixels, NoiseSource<T>& noise) const;
  static Tensor<T> quantize(const Tensor<T>& x);
  void collect(const std::string& prefix, ParameterRegistry<T>& registry) const override;
  DequantMode mode() const { return mode_; }

  struct Layer {
    int trans_start;
    int trans_count;
    int cond_start;
    int cond_count;
    Conv2d<T> in;
    Conv2d<T> out;  // zero-initialised
  };

 private:
  int c_;
  DequantMode mode_;
  std::vector<Layer> layers_;
};

}  // namespace denseflow

#endif  // DENSEFLOW_BIJECTIONS_HPP
