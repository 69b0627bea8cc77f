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

#ifndef DENSEFLOW_DATA_HPP
#define DENSEFLOW_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "denseflow/tensor.hpp"

namespace denseflow {

/// 8-bit images stored NHWC.
struct ImageDataset {
  std::uint32_t count = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint16_t channels = 0;
  std::vector<std::uint8_t> pixels;
  std::string split = "train";  // in-memory tag only

  std::int64_t image_size() const { return static_cast<std::int64_t>(height) * width * channels; }
  std::uint8_t at(std::int64_t n, int c, int y, int x) const {
    return pixels[static_cast<std::size_t>(((n * height + y) * width + x) * channels + c)];
  }
  // NCHW tensor of the selected images; `flip` mirrors each row of image i
  // when flip[i] is set.
  template <typename T>
  Tensor<T> batch(const std::vector<std::int64_t>& indices, const std::vector<bool>& flip = {}) const;
  ImageDataset subset(std::int64_t start, std::int64_t count) const;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const ImageDataset& ds);
/// Throws DataError naming the byte offset of the first problem.
ImageDataset decode_dataset(const std::vector<std::uint8_t>& bytes);
void write_dataset(const std::string& path, const ImageDataset& ds);
ImageDataset read_dataset(const std::string& path);

/// Procedural textures: per image a base colour, a linear colour gradient and
/// one to three Gaussian blobs, rounded and clamped to 0..255.
ImageDataset synth_textures(std::int64_t n, int height, int width, int channels, std::uint64_t seed);

/// Raw u8 planar (NCHW) bytes into a dataset.
ImageDataset from_planar(const std::vector<std::uint8_t>& bytes, std::int64_t n, int channels, int height,
                         int width);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace denseflow

#endif  // DENSEFLOW_DATA_HPP
