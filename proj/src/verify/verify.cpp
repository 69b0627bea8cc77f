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

#include "denseflow/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "denseflow/checkpoint.hpp"
#include "denseflow/coupling.hpp"
#include "denseflow/data.hpp"
#include "denseflow/estimator.hpp"
#include "denseflow/flow_model.hpp"
#include "denseflow/ops.hpp"
#include "denseflow/toy.hpp"
#include "denseflow/trainer.hpp"

namespace denseflow {

namespace numeric {

double log_abs_det(std::vector<double> a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[p * n + c])) p = r;
    if (a[p * n + c] == 0.0) return -std::numeric_limits<double>::infinity();
    if (p != c)
      for (std::size_t k = 0; k < n; ++k) std::swap(a[p * n + k], a[c * n + k]);
    const double piv = a[c * n + c];
    acc += std::log(std::abs(piv));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / piv;
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
    }
  }
  return acc;
}

double logdet_fd(Bijection<double>& b, const Tensor<double>& x, double eps) {
  const auto n = static_cast<std::size_t>(x.numel());
  std::vector<double> jac(n * n);
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t j = 0; j < n; ++j) {
    const double x0 = v[j];
    v[j] = x0 + eps;
    const auto yp = b.forward(Tensor<double>(x.shape(), v)).y;
    v[j] = x0 - eps;
    const auto ym = b.forward(Tensor<double>(x.shape(), v)).y;
    v[j] = x0;
    for (std::size_t i = 0; i < n; ++i) jac[i * n + j] = (yp[static_cast<std::int64_t>(i)] - ym[static_cast<std::int64_t>(i)]) / (2 * eps);
  }
  return log_abs_det(jac, n);
}

GradCheck grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& loss,
                     std::vector<Tensor<double>> leaves, int coords, std::uint64_t seed, double eps, double floor) {
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(loss(leaves));
  }
  Rng rng(seed);
  GradCheck res;
  NoGradScope<double> guard;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    for (int c = 0; c < coords; ++c) {
      const auto i = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(leaf.numel())));
      auto d = leaf.mutable_data();
      const double x0 = d[i];
      d[i] = x0 + eps;
      const double fp = loss(leaves).item();
      d[i] = x0 - eps;
      const double fm = loss(leaves).item();
      d[i] = x0;
      const double num = (fp - fm) / (2 * eps);
      const double scale = std::max(std::abs(num), std::abs(analytic[i]));
      if (scale < floor) continue;
      res.max_rel_error = std::max(res.max_rel_error, std::abs(num - analytic[i]) / scale);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace numeric

namespace {

using TD = Tensor<double>;
using Clock = std::chrono::steady_clock;

template <typename T>
Tensor<T> randn(const Shape& s, Rng& rng, double scale = 1.0) {
  return normal_tensor<T>(s, rng, static_cast<T>(scale));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Random weights on every zero-initialised output layer.
template <typename T>
void perturb(const Module<T>& m, Rng& rng, double scale) {
  ParameterRegistry<T> reg;
  m.collect("m", reg);
  for (const auto& e : reg.entries()) {
    const bool zero_init = ends_with(e.name, "blend.weight") || ends_with(e.name, "out.weight") ||
                           ends_with(e.name, "prior.weight");
    if (!zero_init) continue;
    Tensor<T> t = e.tensor;
    for (auto& v : t.mutable_data()) v = static_cast<T>(scale * rng.normal());
  }
}

template <typename T>
Tensor<T> random_pixels(const Shape& s, Rng& rng) {
  Tensor<T> px(s);
  for (auto& v : px.mutable_data()) v = static_cast<T>(rng.below(256));
  return px;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// A glow-like module over c channels at h x w with a perturbed fusion net.
template <typename T>
std::unique_ptr<Chain<T>> glow_module(int c, int h, int w, bool reverse, Rng& rng) {
  auto chain = std::make_unique<Chain<T>>();
  auto an = std::make_unique<ActNorm<T>>(c);
  std::vector<T> s, b;
  for (int i = 0; i < c; ++i) {
    s.push_back(static_cast<T>(0.5 + rng.uniform()));
    b.push_back(static_cast<T>(0.3 * rng.normal()));
  }
  an->set(s, b);
  chain->push(std::move(an));
  chain->push(std::make_unique<InvConv1x1<T>>(c, rng));
  const auto [cond, trans] = AffineCoupling<T>::parts(c, reverse);
  auto net = std::make_unique<FusionCouplingNet<T>>(cond, trans, h, w, CouplingNetConfig{8, 2, 4, 1, 0, 6}, rng);
  perturb<T>(*net, rng, 0.05);
  chain->push(std::make_unique<AffineCoupling<T>>(c, std::move(net), reverse));
  return chain;
}

class Suite {
 public:
  Suite(const VerifyOptions& opts, const std::function<void(const CheckResult&)>& cb) : opts_(opts), cb_(cb) {}

  void check(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
    CheckResult r;
    r.name = name;
    const auto t0 = Clock::now();
    try {
      std::tie(r.passed, r.detail) = body();
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (cb_) cb_(r);
    results_.push_back(std::move(r));
  }

  const VerifyOptions& opts() const { return opts_; }
  std::vector<CheckResult> take() { return std::move(results_); }

 private:
  VerifyOptions opts_;
  std::function<void(const CheckResult&)> cb_;
  std::vector<CheckResult> results_;
};

// Worst inverse(forward(x)) error over random inputs, in both precisions.
template <typename T>
double worst_round_trip(Bijection<T>& b, const Shape& s, int trials, Rng& rng, double scale) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto x = randn<T>(s, rng, scale);
    worst = std::max(worst, static_cast<double>(ops::max_abs_diff(b.inverse(b.forward(x).y), x)));
  }
  return worst;
}

template <typename T>
std::vector<std::pair<std::string, std::unique_ptr<Bijection<T>>>> bijection_zoo(Rng& rng) {
  // 3 x 4 x 4 inputs: 48 dimensions per example.
  std::vector<std::pair<std::string, std::unique_ptr<Bijection<T>>>> zoo;
  auto an = std::make_unique<ActNorm<T>>(3);
  an->set({T(0.5), T(2), T(-1.5)}, {T(0.1), T(-0.3), T(0.2)});
  zoo.emplace_back("actnorm", std::move(an));
  std::vector<T> lower(9), upper(9), log_s(3);
  for (auto& v : lower) v = static_cast<T>(0.4 * rng.normal());
  for (auto& v : upper) v = static_cast<T>(0.4 * rng.normal());
  for (auto& v : log_s) v = static_cast<T>(0.3 * rng.normal());
  zoo.emplace_back("invconv", std::make_unique<InvConv1x1<T>>(std::vector<int>{2, 0, 1}, lower, upper,
                                                             std::vector<T>{1, -1, 1}, log_s));
  const auto [cond, trans] = AffineCoupling<T>::parts(3, false);
  auto fusion = std::make_unique<FusionCouplingNet<T>>(cond, trans, 4, 4, CouplingNetConfig{8, 2, 4, 1, 0, 6}, rng);
  perturb<T>(*fusion, rng, 0.1);
  zoo.emplace_back("coupling.fusion", std::make_unique<AffineCoupling<T>>(3, std::move(fusion)));
  const auto [rcond, rtrans] = AffineCoupling<T>::parts(3, true);
  auto glow = std::make_unique<GlowCouplingNet<T>>(rcond, rtrans, 8, rng);
  perturb<T>(*glow, rng, 0.1);
  zoo.emplace_back("coupling.glow.reversed", std::make_unique<AffineCoupling<T>>(3, std::move(glow), true));
  zoo.emplace_back("squeeze", std::make_unique<Squeeze<T>>());
  auto flow = std::make_unique<Chain<T>>();
  for (int i = 0; i < 3; ++i) flow->push(glow_module<T>(3, 4, 4, i % 2 == 1, rng));
  zoo.emplace_back("three_modules", std::move(flow));
  return zoo;
}

void invertibility(Suite& s) {
  const int trials = s.opts().trials;
  Rng rng(mix_seed(s.opts().seed, 1));
  auto zd = bijection_zoo<double>(rng);
  auto zf = bijection_zoo<float>(rng);
  for (std::size_t i = 0; i < zd.size(); ++i) {
    s.check("invert." + zd[i].first, [&, i] {
      // Warm the data-dependent init before measuring.
      zd[i].second->forward(randn<double>({8, 3, 4, 4}, rng));
      zf[i].second->forward(randn<float>({8, 3, 4, 4}, rng));
      const double e64 = worst_round_trip(*zd[i].second, {2, 3, 4, 4}, trials, rng, 1.5);
      const double e32 = worst_round_trip(*zf[i].second, {2, 3, 4, 4}, trials, rng, 1.5);
      return std::pair{e64 < 1e-8 && e32 < 1e-4, "max abs 64-bit " + fmt(e64) + ", 32-bit " + fmt(e32)};
    });
  }
  for (const auto& name : preset_names()) {
    s.check("invert.model." + name, [&, name] {
      auto cfg = preset(name).model;
      if (cfg.height > 8) cfg = desk_scaled(cfg);
      FlowModel<float> m(cfg);
      RngNoise<float> noise(rng);
      const auto px = random_pixels<float>({4, cfg.channels, cfg.height, cfg.width}, rng);
      m.forward(px, noise);
      perturb<float>(m, rng, 0.02);
      m.set_training(false);
      LatentRecord<float> rec;
      m.forward(px, noise, &rec);
      const double err = ops::max_abs_diff(m.decode(rec), rec.x);
      return std::pair{err < 1e-3, "encode/decode max abs " + fmt(err)};
    });
  }
}

void jacobians(Suite& s) {
  Rng rng(mix_seed(s.opts().seed, 2));
  auto zoo = bijection_zoo<double>(rng);
  for (auto& [name, b] : zoo) {
    if (name == "squeeze") continue;
    s.check("jacobian." + name, [&] {
      b->forward(randn<double>({8, 3, 4, 4}, rng));
      b->set_training(false);
      const auto x = randn<double>({1, 3, 4, 4}, rng);
      const double analytic = b->forward(x).logdet[0];
      const double fd = numeric::logdet_fd(*b, x);
      const double rel = std::abs(analytic - fd) / std::max(1.0, std::abs(fd));
      return std::pair{rel < 1e-3, "analytic " + fmt(analytic) + " vs numeric " + fmt(fd)};
    });
  }
}

void gradients(Suite& s) {
  Rng rng(mix_seed(s.opts().seed, 3));
  auto report = [](const numeric::GradCheck& g) {
    return std::pair{g.checked > 0 && g.max_rel_error < 1e-3,
                     "max rel error " + fmt(g.max_rel_error) + " over " + std::to_string(g.checked) + " coords"};
  };
  s.check("grad.conv2d", [&] {
    std::vector<TD> leaves{randn<double>({2, 3, 4, 4}, rng), randn<double>({5, 3, 3, 3}, rng, 0.3),
                           randn<double>({5}, rng)};
    return report(numeric::grad_check(
        [](const std::vector<TD>& l) { return ops::sum(ops::square(ops::conv2d(l[0], l[1], l[2], 1))); }, leaves, 8,
        1));
  });
  s.check("grad.dense_block", [&] {
    DenseBlock<double> blk(3, 2, 3, rng);
    ParameterRegistry<double> reg;
    blk.collect("d", reg);
    std::vector<TD> leaves{randn<double>({2, 3, 3, 3}, rng)};
    for (const auto& e : reg.trainable()) leaves.push_back(e.tensor);
    return report(numeric::grad_check(
        [&](const std::vector<TD>& l) { return ops::sum(ops::square(blk(l[0]))); }, leaves, 4, 2));
  });
  s.check("grad.nystrom_attention", [&] {
    NystromAttention<double> attn(4, 4, 4, 4, 1, 6, rng);
    ParameterRegistry<double> reg;
    attn.collect("a", reg);
    std::vector<TD> leaves{randn<double>({2, 4, 4, 4}, rng)};
    for (const auto& e : reg.trainable()) leaves.push_back(e.tensor);
    return report(numeric::grad_check(
        [&](const std::vector<TD>& l) { return ops::sum(ops::square(attn(l[0]))); }, leaves, 4, 3));
  });
  s.check("grad.glow_module", [&] {
    auto mod = glow_module<double>(3, 4, 4, false, rng);
    ParameterRegistry<double> reg;
    mod->collect("g", reg);
    std::vector<TD> leaves{randn<double>({2, 3, 4, 4}, rng)};
    for (const auto& e : reg.trainable()) leaves.push_back(e.tensor);
    return report(numeric::grad_check(
        [&](const std::vector<TD>& l) {
          const auto step = mod->forward(l[0]);
          return ops::sub(ops::mul_scalar(ops::sum(ops::square(step.y)), 0.5), ops::sum(step.logdet));
        },
        leaves, 2, 4));
  });
  s.check("grad.desk_model_nll", [&] {
    auto cfg = preset("denseflow-12-4").model;
    FlowModel<double> m(cfg);
    const auto px = random_pixels<double>({2, 3, 8, 8}, rng);
    RngNoise<double> inner(rng);
    RecordingNoise<double> rec(inner);
    m.forward(px, rec);
    perturb<double>(m, rng, 0.02);
    const auto draws = rec.draws();
    const auto reg = m.parameters();
    const auto params = reg.trainable();
    std::vector<TD> leaves;
    // A spread of leaves keeps the check under a few seconds.
    for (std::size_t i = 0; i < params.size(); i += 7) leaves.push_back(params[i].tensor);
    return report(numeric::grad_check(
        [&](const std::vector<TD>&) {
          ReplayNoise<double> replay(draws);
          return ops::mul_scalar(ops::sum(m.forward(px, replay).bound), -0.5);
        },
        leaves, 1, 5));
  });
}

void attention_checks(Suite& s) {
  Rng rng(mix_seed(s.opts().seed, 4));
  s.check("nystrom.landmarks_equal_positions", [&] {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const auto q = randn<double>({1, 16, 4}, rng), k = randn<double>({1, 16, 4}, rng), v = randn<double>({1, 16, 4}, rng);
      const auto exact = attention::exact(q, k, v);
      const auto approx = attention::nystrom(q, k, v, 16, 40);
      worst = std::max(worst, ops::max_abs_diff(approx, exact) / std::max(1e-12, ops::max_abs_diff(exact, TD(exact.shape()))));
    }
    return std::pair{worst < 1e-4, "worst relative error " + fmt(worst) + " (40 iterations)"};
  });
  s.check("nystrom.segment_constant_inputs", [&] {
    // Queries and keys constant on each landmark segment make the low-rank
    // form exact.
    const auto base_q = randn<double>({1, 4, 1, 4}, rng), base_k = randn<double>({1, 4, 1, 4}, rng);
    const Shape s4{1, 4, 4, 4};
    auto widen = [&](const TD& b) {
      return ops::reshape(ops::add(b, TD(s4)), Shape{1, 16, 4});
    };
    const auto q = widen(base_q), k = widen(base_k), v = randn<double>({1, 16, 4}, rng);
    const auto exact = attention::exact(q, k, v);
    const double err = ops::max_abs_diff(attention::nystrom(q, k, v, 4, 40), exact) /
                       std::max(1e-12, ops::max_abs_diff(exact, TD(exact.shape())));
    return std::pair{err < 1e-6, "relative error " + fmt(err) + " (40 iterations)"};
  });
}

void bound_checks(Suite& s) {
  Rng rng(mix_seed(s.opts().seed, 5));
  s.check("bound.white_noise_toy_is_exact", [&] {
    const AugmentationToy<double> toy(3, NoiseMode::white, 1, 0.0);
    RngNoise<double> noise(rng);
    const TD z(Shape{3, 1, 1, 1}, {-1.0, 0.2, 1.7});
    const auto b = toy.bound(z, noise).bound;
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(b[i] - AugmentationToy<double>::exact(z[i])));
    return std::pair{worst < 1e-12, "max deviation " + fmt(worst) + " nats"};
  });
  s.check("bound.learned_noise_toy_mc", [&] {
    const AugmentationToy<double> toy(1, NoiseMode::learned, 2, 0.4);
    RngNoise<double> noise(rng);
    const TD z(Shape{10000, 1, 1, 1}, 0.7);
    const auto b = toy.bound(z, noise).bound;
    std::vector<double> v(b.data().begin(), b.data().end());
    const double est = log_mean_exp(v);
    const double mx = *std::max_element(v.begin(), v.end());
    double s1 = 0, s2 = 0;
    for (double x : v) {
      const double w = std::exp(x - mx);
      s1 += w;
      s2 += w * w;
    }
    const double n = static_cast<double>(v.size()), mean = s1 / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n) / mean;
    const double exact = AugmentationToy<double>::exact(0.7);
    return std::pair{std::abs(est - exact) < 3 * se,
                     "K=1e4 bound " + fmt(est) + " vs exact " + fmt(exact) + " (se " + fmt(se) + ")"};
  });
}

void format_checks(Suite& s) {
  Rng rng(mix_seed(s.opts().seed, 6));
  s.check("format.dfim", [&] {
    const auto ds = synth_textures(20, 5, 3, 2, rng.next_u64());
    const auto a = encode_dataset(ds);
    return std::pair{encode_dataset(decode_dataset(a)) == a, std::to_string(a.size()) + " bytes"};
  });
  s.check("format.dfck", [&] {
    FlowModel<float> m(preset("denseflow-12-4").model);
    Checkpoint ck;
    put_model(ck, m);
    ck.config = "[model]\n";
    ck.rng_state = rng.state();
    const auto a = encode_checkpoint(ck);
    return std::pair{encode_checkpoint(decode_checkpoint(a)) == a, std::to_string(a.size()) + " bytes"};
  });
  s.check("estimator.uniform_calibration", [&] {
    return std::pair{std::abs(bits_per_dim(-192 * std::log(256.0), 192) - 8.0) < 1e-12, "8 bpd"};
  });
}

}  // namespace

std::vector<CheckResult> run_verify_suite(const VerifyOptions& opts,
                                          const std::function<void(const CheckResult&)>& on_result) {
  Suite s(opts, on_result);
  invertibility(s);
  jacobians(s);
  gradients(s);
  attention_checks(s);
  bound_checks(s);
  format_checks(s);
  return s.take();
}

}  // namespace denseflow
