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

#include "denseflow/bijections.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "denseflow/ops.hpp"

namespace denseflow {
namespace {

template <typename T>
Tensor<T> per_example(std::int64_t batch, const Tensor<T>& scalar) {
  return ops::mul(Tensor<T>(Shape{batch}, T(1)), scalar);
}

template <typename T>
void require_nchw(const Tensor<T>& x, int channels, const char* who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) + " channels, got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
LikelihoodTerms<T> LikelihoodTerms<T>::zeros(std::int64_t batch) {
  return {Tensor<T>(Shape{batch}), Tensor<T>(Shape{batch}), Tensor<T>(Shape{batch}),
          Tensor<T>(Shape{batch})};
}

template <typename T>
Tensor<T> LikelihoodTerms<T>::total() const {
  return ops::add(ops::add(logdet_sum, noise_penalty), ops::add(prior_logprob, dequant));
}

// ---------------------------------------------------------------- ActNorm

template <typename T>
ActNorm<T>::ActNorm(int channels)
    : scale_(Shape{1, channels, 1, 1}, T(1)), bias_(Shape{1, channels, 1, 1}, T(0)), flag_(Shape{1}, T(0)) {
  if (channels < 1) throw ConfigError("actnorm: channels must be positive");
}

template <typename T>
void ActNorm<T>::set(const std::vector<T>& scale, const std::vector<T>& bias) {
  if (static_cast<std::int64_t>(scale.size()) != scale_.numel() ||
      static_cast<std::int64_t>(bias.size()) != bias_.numel()) {
    throw ShapeError("actnorm: parameter length mismatch");
  }
  std::copy(scale.begin(), scale.end(), scale_.mutable_data().begin());
  std::copy(bias.begin(), bias.end(), bias_.mutable_data().begin());
  flag_.mutable_data()[0] = T(1);
}

template <typename T>
void ActNorm<T>::initialize(const Tensor<T>& x) {
  const std::int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto data = x.data();
  auto s = scale_.mutable_data();
  auto o = bias_.mutable_data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t n = 0; n < b; ++n) {
      const T* p = data.data() + (n * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) sum += p[i];
    }
    const double count = static_cast<double>(b * hw);
    const double mean = sum / count;
    for (std::int64_t n = 0; n < b; ++n) {
      const T* p = data.data() + (n * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const double scale = 1.0 / (std::sqrt(sq / count) + 1e-6);
    s[static_cast<std::size_t>(ch)] = static_cast<T>(scale);
    o[static_cast<std::size_t>(ch)] = static_cast<T>(-mean * scale);
  }
  flag_.mutable_data()[0] = T(1);
}

template <typename T>
FlowStep<T> ActNorm<T>::forward(const Tensor<T>& x) {
  require_nchw(x, static_cast<int>(scale_.dim(1)), "actnorm");
  if (!initialized()) initialize(x);
  for (T s : scale_.data()) {
    if (!(std::abs(s) >= T(1e-12))) throw NumericDomainError("actnorm: singular scale");
  }
  auto y = ops::add(ops::mul(x, scale_), bias_);
  auto ld = ops::mul_scalar(ops::sum(ops::log(ops::abs(scale_))), static_cast<T>(x.dim(2) * x.dim(3)));
  return {y, per_example(x.dim(0), ld)};
}

template <typename T>
Tensor<T> ActNorm<T>::inverse(const Tensor<T>& y) const {
  require_nchw(y, static_cast<int>(scale_.dim(1)), "actnorm");
  for (T s : scale_.data()) {
    if (!(std::abs(s) >= T(1e-12))) throw NumericDomainError("actnorm: singular scale");
  }
  return ops::div(ops::sub(y, bias_), scale_);
}

template <typename T>
void ActNorm<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  registry.add(prefix + ".scale", scale_);
  registry.add(prefix + ".bias", bias_);
  registry.add(prefix + ".initialized", flag_, ParamKind::buffer);
}

// ------------------------------------------------------------- InvConv1x1

template <typename T>
InvConv1x1<T>::InvConv1x1(int channels, Rng& rng) : c_(channels) {
  if (channels < 1) throw ConfigError("invconv: channels must be positive");
  const auto n = static_cast<std::size_t>(channels);
  // Random orthogonal matrix by modified Gram-Schmidt on a Gaussian matrix,
  // rows as vectors. Degenerate draws are retried.
  std::vector<double> q(n * n);
  for (;;) {
    for (auto& v : q) v = rng.normal();
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += q[i * n + k] * q[j * n + k];
        for (std::size_t k = 0; k < n; ++k) q[i * n + k] -= dot * q[j * n + k];
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < n; ++k) norm += q[i * n + k] * q[i * n + k];
      norm = std::sqrt(norm);
      if (norm < 1e-6) ok = false;
      for (std::size_t k = 0; k < n; ++k) q[i * n + k] /= norm;
    }
    if (ok) break;
  }
  // Partial-pivot LU: row piv[i] of q is row i of L U.
  std::vector<std::size_t> piv(n);
  for (std::size_t i = 0; i < n; ++i) piv[i] = i;
  std::vector<double> a = q;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t best = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[best * n + col])) best = r;
    }
    if (best != col) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[col * n + k], a[best * n + k]);
      std::swap(piv[col], piv[best]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      a[r * n + col] /= a[col * n + col];
      for (std::size_t k = col + 1; k < n; ++k) a[r * n + k] -= a[r * n + col] * a[col * n + k];
    }
  }
  std::vector<T> lower(n * n, T(0)), upper(n * n, T(0)), sign(n), log_s(n);
  std::vector<T> perm(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      if (k < i) lower[i * n + k] = static_cast<T>(a[i * n + k]);
      if (k > i) upper[i * n + k] = static_cast<T>(a[i * n + k]);
    }
    const double d = a[i * n + i];
    sign[i] = d < 0 ? T(-1) : T(1);
    log_s[i] = static_cast<T>(std::log(std::abs(d)));
    perm[piv[i]] = static_cast<T>(i);
  }
  perm_ = Tensor<T>(Shape{channels}, perm);
  lower_ = Tensor<T>(Shape{channels, channels}, lower);
  upper_ = Tensor<T>(Shape{channels, channels}, upper);
  sign_ = Tensor<T>(Shape{channels}, sign);
  log_s_ = Tensor<T>(Shape{channels}, log_s);
  build_constants();
}

template <typename T>
InvConv1x1<T>::InvConv1x1(std::vector<int> perm, const std::vector<T>& lower, const std::vector<T>& upper,
                          const std::vector<T>& sign, const std::vector<T>& log_s)
    : c_(static_cast<int>(perm.size())) {
  const auto n = perm.size();
  if (n == 0 || lower.size() != n * n || upper.size() != n * n || sign.size() != n || log_s.size() != n) {
    throw ShapeError("invconv: factor sizes do not match");
  }
  std::vector<int> seen(n, 0);
  std::vector<T> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (perm[i] < 0 || static_cast<std::size_t>(perm[i]) >= n || seen[perm[i]]++) {
      throw ConfigError("invconv: not a permutation");
    }
    p[i] = static_cast<T>(perm[i]);
  }
  for (T s : sign) {
    if (s != T(1) && s != T(-1)) throw ConfigError("invconv: sign entries must be +-1");
  }
  perm_ = Tensor<T>(Shape{c_}, p);
  lower_ = Tensor<T>(Shape{c_, c_}, lower);
  upper_ = Tensor<T>(Shape{c_, c_}, upper);
  sign_ = Tensor<T>(Shape{c_}, sign);
  log_s_ = Tensor<T>(Shape{c_}, log_s);
  build_constants();
}

template <typename T>
void InvConv1x1<T>::build_constants() {
  const auto n = static_cast<std::int64_t>(c_);
  pmat_ = Tensor<T>(Shape{n, n});
  lower_mask_ = Tensor<T>(Shape{n, n});
  upper_mask_ = Tensor<T>(Shape{n, n});
  eye_ = ops::eye<T>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    pmat_.mutable_data()[static_cast<std::size_t>(i * n + static_cast<std::int64_t>(perm_[i]))] = T(1);
    for (std::int64_t k = 0; k < n; ++k) {
      if (k < i) lower_mask_.mutable_data()[static_cast<std::size_t>(i * n + k)] = T(1);
      if (k > i) upper_mask_.mutable_data()[static_cast<std::size_t>(i * n + k)] = T(1);
    }
  }
}

template <typename T>
Tensor<T> InvConv1x1<T>::weight() const {
  auto l = ops::add(ops::mul(lower_, lower_mask_), eye_);
  auto diag = ops::mul(eye_, ops::reshape(ops::mul(sign_, ops::exp(log_s_)), Shape{1, c_}));
  auto u = ops::add(ops::mul(upper_, upper_mask_), diag);
  return ops::matmul(pmat_, ops::matmul(l, u));
}

template <typename T>
Tensor<T> InvConv1x1<T>::inverse_weight() const {
  const auto n = static_cast<std::size_t>(c_);
  const auto lo = lower_.data(), up = upper_.data();
  // W^-1 = U^-1 L^-1 P^T, solved in double.
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto ni = static_cast<Eigen::Index>(n);
  Mat l = Mat::Identity(ni, ni), u = Mat::Zero(ni, ni), m = Mat::Zero(ni, ni);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < i; ++k) l(r, static_cast<Eigen::Index>(k)) = static_cast<double>(lo[i * n + k]);
    for (std::size_t k = i + 1; k < n; ++k) u(r, static_cast<Eigen::Index>(k)) = static_cast<double>(up[i * n + k]);
    u(r, r) = static_cast<double>(sign_[static_cast<std::int64_t>(i)]) *
              std::exp(static_cast<double>(log_s_[static_cast<std::int64_t>(i)]));
    m(static_cast<Eigen::Index>(perm_[static_cast<std::int64_t>(i)]), r) = 1.0;
  }
  l.triangularView<Eigen::UnitLower>().solveInPlace(m);
  u.triangularView<Eigen::Upper>().solveInPlace(m);
  const std::vector<double> x(m.data(), m.data() + m.size());
  std::vector<T> out(x.begin(), x.end());
  return Tensor<T>(Shape{c_, c_}, out);
}

template <typename T>
T InvConv1x1<T>::min_abs_s() const {
  T best = std::numeric_limits<T>::infinity();
  for (T v : log_s_.data()) best = std::min(best, std::exp(v));
  return best;
}

template <typename T>
FlowStep<T> InvConv1x1<T>::forward(const Tensor<T>& x) {
  require_nchw(x, c_, "invconv");
  auto kernel = ops::reshape(weight(), Shape{c_, c_, 1, 1});
  auto y = ops::conv2d(x, kernel, Tensor<T>(), 0);
  auto ld = ops::mul_scalar(ops::sum(log_s_), static_cast<T>(x.dim(2) * x.dim(3)));
  return {y, per_example(x.dim(0), ld)};
}

template <typename T>
Tensor<T> InvConv1x1<T>::inverse(const Tensor<T>& y) const {
  require_nchw(y, c_, "invconv");
  return ops::conv2d(y, ops::reshape(inverse_weight(), Shape{c_, c_, 1, 1}), Tensor<T>(), 0);
}

template <typename T>
void InvConv1x1<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  registry.add(prefix + ".perm", perm_, ParamKind::buffer);
  registry.add(prefix + ".lower", lower_);
  registry.add(prefix + ".upper", upper_);
  registry.add(prefix + ".sign", sign_, ParamKind::buffer);
  registry.add(prefix + ".log_s", log_s_);
}

// --------------------------------------------------------- AffineCoupling

template <typename T>
AffineCoupling<T>::AffineCoupling(int channels, std::unique_ptr<CouplingNet<T>> net, bool reverse)
    : c_(channels), c1_(split_point(channels)), reverse_(reverse), net_(std::move(net)) {
  if (channels < 2) throw ConfigError("coupling: needs at least 2 channels");
  if (!net_) throw ContractError("coupling: missing conditioner");
}

template <typename T>
std::pair<int, int> AffineCoupling<T>::parts(int channels, bool reverse) {
  const int c1 = split_point(channels);
  return reverse ? std::pair{channels - c1, c1} : std::pair{c1, channels - c1};
}

template <typename T>
FlowStep<T> AffineCoupling<T>::forward(const Tensor<T>& x) {
  require_nchw(x, c_, "coupling");
  auto a = ops::slice(x, 1, 0, c1_);
  auto b = ops::slice(x, 1, c1_, c_ - c1_);
  const auto& cond = reverse_ ? b : a;
  const auto& moved = reverse_ ? a : b;
  auto [raw, t] = (*net_)(cond);
  auto pre = ops::add_scalar(raw, T(2));
  auto s = ops::sigmoid(pre);
  auto y2 = ops::add(ops::mul(s, moved), t);
  FlowStep<T> out{reverse_ ? ops::concat<T>({y2, b}, 1) : ops::concat<T>({a, y2}, 1),
                  ops::sum_per_example(ops::log_sigmoid(pre))};
  for (T v : s.data()) out.min_scale = std::min(out.min_scale, v);
  return out;
}

template <typename T>
Tensor<T> AffineCoupling<T>::inverse(const Tensor<T>& y) const {
  require_nchw(y, c_, "coupling");
  auto a = ops::slice(y, 1, 0, c1_);
  auto b = ops::slice(y, 1, c1_, c_ - c1_);
  const auto& cond = reverse_ ? b : a;
  const auto& moved = reverse_ ? a : b;
  auto [raw, t] = (*net_)(cond);
  auto s = ops::sigmoid(ops::add_scalar(raw, T(2)));
  auto x2 = ops::div(ops::sub(moved, t), s);
  return reverse_ ? ops::concat<T>({x2, b}, 1) : ops::concat<T>({a, x2}, 1);
}

template <typename T>
void AffineCoupling<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  net_->collect(prefix + ".net", registry);
}

// ---------------------------------------------------------------- Squeeze

template <typename T>
FlowStep<T> Squeeze<T>::forward(const Tensor<T>& x) {
  return {ops::space_to_channel(x), Tensor<T>(Shape{x.dim(0)})};
}

template <typename T>
Tensor<T> Squeeze<T>::inverse(const Tensor<T>& y) const {
  return ops::channel_to_space(y);
}

// ------------------------------------------------------------------ Chain

template <typename T>
FlowStep<T> Chain<T>::forward(const Tensor<T>& x) {
  FlowStep<T> acc{x, Tensor<T>(Shape{x.dim(0)})};
  for (auto& m : members_) {
    auto step = m->forward(acc.y);
    acc.y = step.y;
    acc.logdet = ops::add(acc.logdet, step.logdet);
    acc.min_scale = std::min(acc.min_scale, step.min_scale);
  }
  return acc;
}

template <typename T>
Tensor<T> Chain<T>::inverse(const Tensor<T>& y) const {
  Tensor<T> x = y;
  for (auto it = members_.rbegin(); it != members_.rend(); ++it) x = (*it)->inverse(x);
  return x;
}

template <typename T>
void Chain<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  for (std::size_t i = 0; i < members_.size(); ++i) {
    members_[i]->collect(prefix + "." + std::to_string(i) + "." + members_[i]->kind(), registry);
  }
}

template <typename T>
void Chain<T>::set_training(bool training) {
  for (auto& m : members_) m->set_training(training);
}

// -------------------------------------------------------------- FactorOut

template <typename T>
FactorOut<T>::FactorOut(int channels, bool conditional, Rng& rng)
    : half_(channels / 2), conditional_(conditional) {
  if (channels < 2 || channels % 2 != 0) {
    throw ShapeError("factor-out: channel count must be even, got " + std::to_string(channels));
  }
  if (conditional_) net_ = Conv2d<T>(half_, 2 * half_, 3, rng, Init::zero);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> FactorOut<T>::prior(const Tensor<T>& retained) const {
  require_nchw(retained, half_, "factor-out");
  if (!conditional_) {
    return {Tensor<T>(retained.shape()), Tensor<T>(retained.shape())};
  }
  auto out = net_(retained);
  return {ops::slice(out, 1, 0, half_), ops::slice(out, 1, half_, half_)};
}

template <typename T>
FactorOutResult<T> FactorOut<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) % 2 != 0) {
    throw ShapeError("factor-out: channel count must be even, got " + shape_str(x.shape()));
  }
  require_nchw(x, 2 * half_, "factor-out");
  auto retained = ops::slice(x, 1, 0, half_);
  auto dropped = ops::slice(x, 1, half_, half_);
  auto [mu, log_std] = prior(retained);
  auto z = ops::mul(ops::sub(dropped, mu), ops::exp(ops::neg(log_std)));
  const T half_log_2pi = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi));
  auto lp = ops::add_scalar(ops::sub(ops::mul_scalar(ops::square(z), T(-0.5)), log_std), -half_log_2pi);
  return {retained, dropped, ops::sum_per_example(lp)};
}

template <typename T>
Tensor<T> FactorOut<T>::inverse(const Tensor<T>& retained, const Tensor<T>& dropped) const {
  require_nchw(retained, half_, "factor-out");
  require_nchw(dropped, half_, "factor-out");
  return ops::concat<T>({retained, dropped}, 1);
}

template <typename T>
Tensor<T> FactorOut<T>::sample_dropped(const Tensor<T>& retained, T temperature,
                                       NoiseSource<T>& noise) const {
  auto [mu, log_std] = prior(retained);
  auto eps = noise.normal(retained.shape());
  return ops::add(mu, ops::mul(ops::exp(log_std), ops::mul_scalar(eps, temperature)));
}

template <typename T>
void FactorOut<T>::collect(const std::string& prefix, ParameterRegistry<T>& registry) const {
  if (conditional_) net_.collect(prefix + ".prior", registry);
}

template struct LikelihoodTerms<float>;
template struct LikelihoodTerms<double>;
template class ActNorm<float>;
template class ActNorm<double>;
template class InvConv1x1<float>;
template class InvConv1x1<double>;
template class AffineCoupling<float>;
template class AffineCoupling<double>;
template class Squeeze<float>;
template class Squeeze<double>;
template class Chain<float>;
template class Chain<double>;
template class FactorOut<float>;
template class FactorOut<double>;

}  // namespace denseflow
