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

#include "denseflow/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "denseflow/random.hpp"

namespace denseflow {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : st_(std::make_shared<detail::Storage<T>>()) {
  const auto n = shape_numel(shape);
  st_->shape = std::move(shape);
  st_->data.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : st_(std::make_shared<detail::Storage<T>>()) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  st_->shape = std::move(shape);
  st_->data = std::move(values);
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return st_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return st_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor<T>(st_->shape, st_->data);
}

namespace {

template <typename T>
Tape<T>*& tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

}  // namespace

template <typename T>
Tape<T>* active_tape() {
  return tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(tape_slot<T>()) {
  tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  tape_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(tape_slot<T>()) {
  tape_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  tape_slot<T>() = previous_;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (spent_) throw ContractError("backward: tape already consumed");
  spent_ = true;
  if (!loss.requires_grad()) return;  // no parameter reaches the loss
  auto& st = *loss.storage();
  st.ensure_grad();
  st.grad[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

template <typename T>
void ParameterRegistry<T>::add(const std::string& name, Tensor<T> tensor, ParamKind kind) {
  if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
  if (kind == ParamKind::trainable) tensor.set_requires_grad(true);
  entries_.push_back({name, std::move(tensor), kind});
}

template <typename T>
std::vector<NamedTensor<T>> ParameterRegistry<T>::trainable() const {
  std::vector<NamedTensor<T>> out;
  for (const auto& e : entries_) {
    if (e.kind == ParamKind::trainable) out.push_back(e);
  }
  return out;
}

template <typename T>
const NamedTensor<T>* ParameterRegistry<T>::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <typename T>
std::int64_t ParameterRegistry<T>::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) {
    if (e.kind == ParamKind::trainable) n += e.tensor.numel();
  }
  return n;
}

template <typename T>
void ParameterRegistry<T>::zero_grad() {
  for (auto& e : entries_) {
    if (e.kind == ParamKind::trainable) e.tensor.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Rng

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // 1 - u keeps the logarithm argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw ContractError("Rng::below(0)");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng Rng::fork(std::uint64_t key) {
  return Rng(mix_seed(engine_(), key));
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  std::mt19937_64 e;
  is >> e;
  if (!is) throw DataError("malformed rng state");
  engine_ = e;
}

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, Rng& rng, T stddev) {
  Tensor<T> t(shape);
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.normal()) * stddev;
  return t;
}

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, T lo, T hi) {
  Tensor<T> t(shape);
  for (auto& v : t.mutable_data()) v = lo + (hi - lo) * static_cast<T>(rng.uniform());
  return t;
}

#define DENSEFLOW_INSTANTIATE(T)                                               \
  template class Tensor<T>;                                                    \
  template class Tape<T>;                                                      \
  template class TapeScope<T>;                                                 \
  template class NoGradScope<T>;                                               \
  template class ParameterRegistry<T>;                                         \
  template Tape<T>* active_tape<T>();                                          \
  template Tensor<T> normal_tensor<T>(const Shape&, Rng&, T);                  \
  template Tensor<T> uniform_tensor<T>(const Shape&, Rng&, T, T);

DENSEFLOW_INSTANTIATE(float)
DENSEFLOW_INSTANTIATE(double)

}  // namespace denseflow
