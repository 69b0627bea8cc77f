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

#ifndef DENSEFLOW_CHECKPOINT_HPP
#define DENSEFLOW_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "denseflow/tensor.hpp"

namespace denseflow {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::f64;
  std::vector<std::uint64_t> extents;
  std::vector<std::uint8_t> payload;  // little-endian

  std::uint64_t numel() const;
  template <typename T>
  Tensor<T> tensor() const;  // converts between f32 and f64
  std::vector<double> values() const;
};

/// "DFCK", u32 version, u32 record count, records, then the config text and
/// the rng state, each as u32 length plus bytes.
struct Checkpoint {
  std::vector<CheckpointRecord> records;
  std::string config;
  std::string rng_state;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t);
  void put_values(const std::string& name, const std::vector<double>& v);
  const CheckpointRecord* find(const std::string& name) const;
  // Throws DataError when the record is missing.
  const CheckpointRecord& at(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
/// Throws DataError naming the byte offset of the first problem.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace denseflow

#endif  // DENSEFLOW_CHECKPOINT_HPP
