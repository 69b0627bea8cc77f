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

#include "denseflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "denseflow/errors.hpp"
#include "denseflow/random.hpp"

namespace denseflow {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'I', 'M'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 2 + 2 + 2;

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get(const std::vector<std::uint8_t>& in, std::size_t& pos, const char* field) {
  if (pos + sizeof(U) > in.size()) {
    throw DataError("dataset: truncated header at byte offset " + std::to_string(pos) + " reading " + field);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v = static_cast<U>(v | (static_cast<U>(in[pos + i]) << (8 * i)));
  pos += sizeof(U);
  return v;
}

}  // namespace

template <typename T>
Tensor<T> ImageDataset::batch(const std::vector<std::int64_t>& indices, const std::vector<bool>& flip) const {
  const auto b = static_cast<std::int64_t>(indices.size());
  Tensor<T> out(Shape{b, channels, height, width});
  auto d = out.mutable_data();
  std::size_t k = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto n = indices[static_cast<std::size_t>(i)];
    if (n < 0 || n >= count) throw DataError("dataset: index " + std::to_string(n) + " out of range");
    const bool mirror = !flip.empty() && flip[static_cast<std::size_t>(i)];
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) d[k++] = static_cast<T>(at(n, c, y, mirror ? width - 1 - x : x));
  }
  return out;
}

ImageDataset ImageDataset::subset(std::int64_t start, std::int64_t n) const {
  if (start < 0 || n < 0 || start + n > count) throw DataError("dataset: subset out of range");
  ImageDataset out = *this;
  out.count = static_cast<std::uint32_t>(n);
  const auto sz = image_size();
  out.pixels.assign(pixels.begin() + start * sz, pixels.begin() + (start + n) * sz);
  return out;
}

std::vector<std::uint8_t> encode_dataset(const ImageDataset& ds) {
  if (static_cast<std::int64_t>(ds.pixels.size()) != ds.image_size() * ds.count) {
    throw DataError("dataset: pixel payload does not match count x height x width x channels");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put(out, kDatasetVersion);
  put(out, ds.count);
  put(out, ds.height);
  put(out, ds.width);
  put(out, ds.channels);
  out.insert(out.end(), ds.pixels.begin(), ds.pixels.end());
  return out;
}

ImageDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw DataError("dataset: bad magic at byte offset 0");
  }
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos, "version");
  if (version != kDatasetVersion) {
    throw DataError("dataset: unsupported version " + std::to_string(version) + " at byte offset 4");
  }
  ImageDataset ds;
  ds.count = get<std::uint32_t>(bytes, pos, "count");
  ds.height = get<std::uint16_t>(bytes, pos, "height");
  ds.width = get<std::uint16_t>(bytes, pos, "width");
  ds.channels = get<std::uint16_t>(bytes, pos, "channels");
  const auto need = static_cast<std::uint64_t>(ds.count) * static_cast<std::uint64_t>(ds.image_size());
  const auto have = bytes.size() - kHeaderBytes;
  if (have < need) {
    throw DataError("dataset: truncated payload at byte offset " + std::to_string(bytes.size()) + ", expected " +
                    std::to_string(kHeaderBytes + need) + " bytes");
  }
  if (have > need) {
    throw DataError("dataset: trailing bytes at byte offset " + std::to_string(kHeaderBytes + need));
  }
  ds.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes), bytes.end());
  return ds;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

void write_dataset(const std::string& path, const ImageDataset& ds) { write_file(path, encode_dataset(ds)); }

ImageDataset read_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

ImageDataset synth_textures(std::int64_t n, int height, int width, int channels, std::uint64_t seed) {
  if (n < 1) throw DataError("synth: need at least one image");
  if (height < 1 || width < 1 || channels < 1 || height > 65535 || width > 65535 || channels > 65535) {
    throw DataError("synth: bad image extents");
  }
  ImageDataset ds;
  ds.count = static_cast<std::uint32_t>(n);
  ds.height = static_cast<std::uint16_t>(height);
  ds.width = static_cast<std::uint16_t>(width);
  ds.channels = static_cast<std::uint16_t>(channels);
  ds.pixels.resize(static_cast<std::size_t>(n * ds.image_size()));
  Rng rng(seed);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  std::vector<double> img(static_cast<std::size_t>(ds.image_size()));
  const double scale = std::min(height, width);
  for (std::int64_t i = 0; i < n; ++i) {
    // Base colour and gradient; coordinates are centred to [-0.5, 0.5].
    for (int c = 0; c < channels; ++c) {
      const double base = range(96, 160), gx = range(-32, 32), gy = range(-32, 32);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double u = width > 1 ? static_cast<double>(x) / (width - 1) - 0.5 : 0.0;
          const double v = height > 1 ? static_cast<double>(y) / (height - 1) - 0.5 : 0.0;
          img[static_cast<std::size_t>((y * width + x) * channels + c)] = base + gx * u + gy * v;
        }
    }
    const int blobs = 1 + static_cast<int>(rng.below(3));
    for (int k = 0; k < blobs; ++k) {
      const double cx = range(0, width), cy = range(0, height), r = range(0.1, 0.35) * scale;
      std::vector<double> amp(static_cast<std::size_t>(channels));
      for (auto& a : amp) a = range(-60, 60);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double d2 = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy);
          const double g = std::exp(-0.5 * d2 / (r * r));
          for (int c = 0; c < channels; ++c) img[static_cast<std::size_t>((y * width + x) * channels + c)] += amp[c] * g;
        }
    }
    auto* dst = ds.pixels.data() + i * ds.image_size();
    for (std::size_t j = 0; j < img.size(); ++j) {
      dst[j] = static_cast<std::uint8_t>(std::clamp(std::lround(img[j]), 0L, 255L));
    }
  }
  return ds;
}

ImageDataset from_planar(const std::vector<std::uint8_t>& bytes, std::int64_t n, int channels, int height,
                         int width) {
  if (n < 1 || channels < 1 || height < 1 || width < 1 || channels > 65535 || height > 65535 || width > 65535) {
    throw DataError("import: bad shape");
  }
  const auto per = static_cast<std::int64_t>(channels) * height * width;
  if (static_cast<std::int64_t>(bytes.size()) != n * per) {
    throw DataError("import: expected " + std::to_string(n * per) + " bytes, got " + std::to_string(bytes.size()));
  }
  ImageDataset ds;
  ds.count = static_cast<std::uint32_t>(n);
  ds.height = static_cast<std::uint16_t>(height);
  ds.width = static_cast<std::uint16_t>(width);
  ds.channels = static_cast<std::uint16_t>(channels);
  ds.pixels.resize(bytes.size());
  for (std::int64_t i = 0; i < n; ++i)
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          ds.pixels[static_cast<std::size_t>(((i * height + y) * width + x) * channels + c)] =
              bytes[static_cast<std::size_t>(((i * channels + c) * height + y) * width + x)];
        }
  return ds;
}

template Tensor<float> ImageDataset::batch<float>(const std::vector<std::int64_t>&, const std::vector<bool>&) const;
template Tensor<double> ImageDataset::batch<double>(const std::vector<std::int64_t>&, const std::vector<bool>&) const;

}  // namespace denseflow
