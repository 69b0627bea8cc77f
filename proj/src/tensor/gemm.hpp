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

#ifndef DENSEFLOW_SRC_TENSOR_GEMM_HPP
#define DENSEFLOW_SRC_TENSOR_GEMM_HPP

#include <cstdint>

#include <Eigen/Core>

// Row-major accumulate-into kernels on top of Eigen's blocked products.
namespace denseflow::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  Map<T>(c, m, n).noalias() += ConstMap<T>(a, m, k) * ConstMap<T>(b, k, n);
}

// C[m x n] += A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  Map<T>(c, m, n).noalias() += ConstMap<T>(a, k, m).transpose() * ConstMap<T>(b, k, n);
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  Map<T>(c, m, n).noalias() += ConstMap<T>(a, m, k) * ConstMap<T>(b, n, k).transpose();
}

}  // namespace denseflow::detail

#endif  // DENSEFLOW_SRC_TENSOR_GEMM_HPP
