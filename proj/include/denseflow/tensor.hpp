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

#ifndef DENSEFLOW_TENSOR_HPP
#define DENSEFLOW_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "denseflow/errors.hpp"

namespace denseflow {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient flows in
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

/// Dense row-major array in batch x channels x height x width order. Values
/// are shared between copies of the handle; operations always produce new
/// tensors, so a tensor that is not a trainable leaf is effectively immutable.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return st_->shape; }
  int rank() const { return static_cast<int>(st_->shape.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(st_->data.size()); }

  std::span<const T> data() const { return st_->data; }
  // Writable view for initialisation and optimiser updates. Do not use on a
  // tensor that is an input of a live tape.
  std::span<T> mutable_data() { return st_->data; }
  T item() const;
  T operator[](std::int64_t i) const { return st_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return st_ && st_->requires_grad; }
  void set_requires_grad(bool value) { st_->requires_grad = value; }
  bool has_grad() const { return st_ && st_->grad.size() == st_->data.size(); }
  std::span<const T> grad() const { return st_->grad; }
  std::span<T> mutable_grad() {
    st_->ensure_grad();
    return st_->grad;
  }
  void zero_grad() { st_->grad.assign(st_->data.size(), T(0)); }

  // Copy of the values with no tape attachment and no gradient.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<detail::Storage<T>>& storage() const { return st_; }
  static Tensor wrap(std::shared_ptr<detail::Storage<T>> st) {
    Tensor t;
    t.st_ = std::move(st);
    return t;
  }

 private:
  std::shared_ptr<detail::Storage<T>> st_;
};

/// Reverse-mode tape. Operations executed while a TapeScope is active on the
/// current thread record a node whenever one of their inputs requires grad.
template <typename T>
class Tape {
 public:
  struct Node {
    const char* op = "";
    std::shared_ptr<detail::Storage<T>> output;
    std::function<void()> backward;
  };

  void push(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded node in reverse order.
  // Gradients accumulate into leaves; the tape is spent afterwards.
  void backward(const Tensor<T>& loss);
  void clear() {
    nodes_.clear();
    spent_ = false;
  }

 private:
  std::vector<Node> nodes_;
  bool spent_ = false;
};

template <typename T>
Tape<T>* active_tape();

template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording on this thread, e.g. for data-dependent initialisation.
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

enum class ParamKind { trainable, buffer };

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  ParamKind kind;
};

/// Flat registry of every persistent tensor of a model. Names are unique;
/// buffers (running statistics, init flags) are saved but never optimised.
template <typename T>
class ParameterRegistry {
 public:
  void add(const std::string& name, Tensor<T> tensor, ParamKind kind = ParamKind::trainable);
  const std::vector<NamedTensor<T>>& entries() const { return entries_; }
  std::vector<NamedTensor<T>> trainable() const;
  const NamedTensor<T>* find(const std::string& name) const;
  std::int64_t trainable_count() const;
  void zero_grad();

 private:
  std::vector<NamedTensor<T>> entries_;
};

}  // namespace denseflow

#endif  // DENSEFLOW_TENSOR_HPP
