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

#ifndef DENSEFLOW_ERRORS_HPP
#define DENSEFLOW_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace denseflow {

// Every library failure derives from Error so the C boundary can map it to a
// status code with a single catch.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents, indivisible spatial sizes, channel mismatches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// log of a non-positive value, division by zero, singular scales.
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite intermediate values detected while running a model.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Infeasible or malformed configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed files, out-of-range pixels, empty datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

// Divergence or non-finite gradients during optimisation.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// API misuse: backward on a non-scalar, tape misuse, and the like.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace denseflow

#endif  // DENSEFLOW_ERRORS_HPP
