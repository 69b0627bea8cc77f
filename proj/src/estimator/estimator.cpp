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

#include "denseflow/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace denseflow {

double bits_per_dim(double bound_nats, std::int64_t dims) {
  if (dims <= 0) throw ContractError("bits_per_dim: dimension must be positive");
  return -bound_nats / (static_cast<double>(dims) * std::numbers::ln2);
}

double log_mean_exp(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("log_mean_exp: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc / static_cast<double>(v.size()));
}

int thread_count() {
  const char* env = std::getenv("DENSEFLOW_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return std::max(1, n);
}

namespace {

struct ChunkResult {
  std::vector<double> bound_k, bound_1;
  double logdet = 0, noise = 0, prior = 0, dequant = 0;  // sums over examples, nats
};

template <typename T>
ChunkResult run_chunk(const BoundFn<T>& fn, const ImageDataset& data, std::int64_t start, std::int64_t n,
                      const EvalConfig& cfg, std::uint64_t chunk_index) {
  NoGradScope<T> guard;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = start + i;
  const auto px = data.batch<T>(idx);
  Rng rng(mix_seed(cfg.seed, chunk_index));
  RngNoise<T> noise(rng);
  std::vector<std::vector<double>> draws(static_cast<std::size_t>(n));
  ChunkResult out;
  for (int s = 0; s < cfg.mc_samples; ++s) {
    const auto r = fn(px, noise);
    for (std::int64_t i = 0; i < n; ++i) draws[static_cast<std::size_t>(i)].push_back(static_cast<double>(r.bound[i]));
    if (s == 0) {
      for (std::int64_t i = 0; i < n; ++i) {
        out.logdet += static_cast<double>(r.terms.logdet_sum[i]);
        out.noise += static_cast<double>(r.terms.noise_penalty[i]);
        out.prior += static_cast<double>(r.terms.prior_logprob[i]);
        out.dequant += static_cast<double>(r.terms.dequant[i]);
      }
    }
  }
  for (const auto& d : draws) {
    out.bound_k.push_back(log_mean_exp(d));
    out.bound_1.push_back(d.front());
  }
  return out;
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

template <typename T>
EvalReport evaluate(const BoundFn<T>& bound, const ImageDataset& data, const EvalConfig& cfg, int threads) {
  if (data.count == 0) throw DataError("evaluate: empty dataset");
  if (cfg.mc_samples < 1) throw ConfigError("evaluate: mc_samples must be at least 1");
  if (cfg.chunk < 1) throw ConfigError("evaluate: chunk must be positive");
  const std::int64_t n = data.count, d = data.image_size();
  const std::int64_t chunks = (n + cfg.chunk - 1) / cfg.chunk;
  std::vector<ChunkResult> results(static_cast<std::size_t>(chunks));
  auto work = [&](std::int64_t c) {
    const std::int64_t start = c * cfg.chunk;
    results[static_cast<std::size_t>(c)] =
        run_chunk(bound, data, start, std::min<std::int64_t>(cfg.chunk, n - start), cfg, static_cast<std::uint64_t>(c));
  };
  const int workers = static_cast<int>(std::min<std::int64_t>(threads > 0 ? threads : thread_count(), chunks));
  // The first chunk runs alone so lazy initialisation never races.
  work(0);
  if (workers <= 1) {
    for (std::int64_t c = 1; c < chunks; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::int64_t c = 1 + w; c < chunks; c += workers) work(c);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  EvalReport rep;
  rep.examples = n;
  rep.dims = d;
  rep.mc_samples = cfg.mc_samples;
  double sum = 0.0, sum1 = 0.0;
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.bound_k.size(); ++i) {
      rep.bpd.push_back(bits_per_dim(r.bound_k[i], d));
      sum += rep.bpd.back();
      sum1 += bits_per_dim(r.bound_1[i], d);
    }
    rep.logdet_bpd += r.logdet;
    rep.noise_bpd += r.noise;
    rep.prior_bpd += r.prior;
    rep.dequant_bpd += r.dequant;
  }
  const double nd = static_cast<double>(n);
  rep.bpd_mean = sum / nd;
  rep.bpd_k1_mean = sum1 / nd;
  for (double* v : {&rep.logdet_bpd, &rep.noise_bpd, &rep.prior_bpd, &rep.dequant_bpd}) *v = bits_per_dim(*v / nd, d);
  if (n > 1) {
    double ss = 0.0;
    for (double b : rep.bpd) ss += (b - rep.bpd_mean) * (b - rep.bpd_mean);
    rep.bpd_std_error = std::sqrt(ss / (nd - 1.0)) / std::sqrt(nd);
  }
  return rep;
}

template <typename T>
EvalReport evaluate(FlowModel<T>& model, const ImageDataset& data, const EvalConfig& cfg, int threads) {
  const auto& m = model.config();
  if (data.channels != m.channels || data.height != m.height || data.width != m.width) {
    throw DataError("evaluate: dataset images are " + std::to_string(data.channels) + "x" +
                    std::to_string(data.height) + "x" + std::to_string(data.width) + ", model expects " +
                    std::to_string(m.channels) + "x" + std::to_string(m.height) + "x" + std::to_string(m.width));
  }
  model.set_training(false);
  BoundFn<T> fn = [&model](const Tensor<T>& px, NoiseSource<T>& noise) { return model.forward(px, noise); };
  return evaluate(fn, data, cfg, threads);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "examples " << examples << "\n"
     << "dims " << dims << "\n"
     << "mc_samples " << mc_samples << "\n"
     << "bpd " << format_number(bpd_mean) << "\n"
     << "bpd_std_error " << format_number(bpd_std_error) << "\n"
     << "bpd_k1 " << format_number(bpd_k1_mean) << "\n"
     << "bpd_logdet " << format_number(logdet_bpd) << "\n"
     << "bpd_noise " << format_number(noise_bpd) << "\n"
     << "bpd_prior " << format_number(prior_bpd) << "\n"
     << "bpd_dequant " << format_number(dequant_bpd) << "\n";
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["examples"] = examples;
  j["dims"] = dims;
  j["mc_samples"] = mc_samples;
  j["bpd"] = bpd_mean;
  j["bpd_std_error"] = bpd_std_error;
  j["bpd_k1"] = bpd_k1_mean;
  j["components"] = {{"logdet", logdet_bpd}, {"noise", noise_bpd}, {"prior", prior_bpd}, {"dequant", dequant_bpd}};
  j["per_example_bpd"] = bpd;
  return j.dump(2);
}

template EvalReport evaluate<float>(const BoundFn<float>&, const ImageDataset&, const EvalConfig&, int);
template EvalReport evaluate<double>(const BoundFn<double>&, const ImageDataset&, const EvalConfig&, int);
template EvalReport evaluate<float>(FlowModel<float>&, const ImageDataset&, const EvalConfig&, int);
template EvalReport evaluate<double>(FlowModel<double>&, const ImageDataset&, const EvalConfig&, int);

}  // namespace denseflow
