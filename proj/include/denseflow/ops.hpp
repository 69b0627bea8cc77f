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

#ifndef DENSEFLOW_OPS_HPP
#define DENSEFLOW_OPS_HPP

#include <vector>

#include "denseflow/tensor.hpp"

// Differentiable tensor operations. Every function records a tape node when a
// tape is active on the calling thread and at least one input requires grad.
// Binary elementwise operations broadcast numpy-style over ranks up to 4.
namespace denseflow::ops {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// Throws NumericDomainError when any divisor element is zero.
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);

template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
// Throws NumericDomainError on non-positive input.
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
// ln sigmoid(a), evaluated as -softplus(-a).
template <typename T> Tensor<T> log_sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
// Throws NumericDomainError on negative input.
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// Sum of all elements; rank-0 result.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> sum_axes(const Tensor<T>& a, const std::vector<int>& axes, bool keepdims);
template <typename T>
Tensor<T> mean_axes(const Tensor<T>& a, const std::vector<int>& axes, bool keepdims);
// Reduces every axis except the leading one: [b, ...] -> [b].
template <typename T> Tensor<T> sum_per_example(const Tensor<T>& a);
// Maximum over the last axis; the gradient flows to the first arg-max.
template <typename T> Tensor<T> max_last(const Tensor<T>& a, bool keepdims);

// [m,k]x[k,n], [b,m,k]x[b,k,n], or either operand 2-D and broadcast over b.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& a);

// Cross-correlation, stride 1. `bias` may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int padding);

// Softmax over the last axis with max subtraction.
template <typename T> Tensor<T> softmax_last(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, const Shape& shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::int64_t start, std::int64_t length);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& order);
// b x c x h x w -> b x 4c x h/2 x w/2; output channel = 4c + 2dy + dx.
template <typename T> Tensor<T> space_to_channel(const Tensor<T>& a);
template <typename T> Tensor<T> channel_to_space(const Tensor<T>& a);

template <typename T> Tensor<T> eye(std::int64_t n);
template <typename T> bool all_finite(const Tensor<T>& a);
template <typename T> T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace denseflow::ops

namespace denseflow {

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return ops::add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return ops::sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return ops::mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return ops::div(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return ops::neg(a); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return ops::mul_scalar(a, s); }
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return ops::add_scalar(a, s); }

}  // namespace denseflow

#endif  // DENSEFLOW_OPS_HPP
