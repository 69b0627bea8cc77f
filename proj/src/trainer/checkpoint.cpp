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

#include "denseflow/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "denseflow/data.hpp"
#include "denseflow/errors.hpp"

namespace denseflow {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'F', 'C', 'K'};

template <typename U>
void put_int(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_text(std::vector<std::uint8_t>& out, const std::string& s) {
  put_int(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v = static_cast<U>(v | (static_cast<U>(in_[pos_ + i]) << (8 * i)));
    pos_ += sizeof(U);
    return v;
  }
  std::vector<std::uint8_t> bytes(std::uint64_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> out(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  std::string text(const char* what) {
    const auto n = get<std::uint32_t>(what);
    const auto b = bytes(n, what);
    return {b.begin(), b.end()};
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }
  [[noreturn]] void fail(const std::string& why) const {
    throw DataError("checkpoint: " + why + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > in_.size() - pos_) fail(std::string("truncated ") + what);
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

std::size_t width(DType d) { return d == DType::f32 ? 4 : 8; }

}  // namespace

std::uint64_t CheckpointRecord::numel() const {
  std::uint64_t n = 1;
  for (auto e : extents) n *= e;
  return n;
}

std::vector<double> CheckpointRecord::values() const {
  const auto n = numel();
  std::vector<double> out(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    if (dtype == DType::f32) {
      float f;
      std::memcpy(&f, payload.data() + 4 * i, 4);
      out[i] = f;
    } else {
      std::memcpy(&out[i], payload.data() + 8 * i, 8);
    }
  }
  return out;
}

template <typename T>
Tensor<T> CheckpointRecord::tensor() const {
  Shape s;
  for (auto e : extents) s.push_back(static_cast<std::int64_t>(e));
  Tensor<T> t(s);
  auto d = t.mutable_data();
  if ((dtype == DType::f32) == std::is_same_v<T, float>) {
    std::memcpy(d.data(), payload.data(), payload.size());
  } else {
    const auto v = values();
    std::transform(v.begin(), v.end(), d.begin(), [](double x) { return static_cast<T>(x); });
  }
  return t;
}

template <typename T>
void Checkpoint::put(const std::string& name, const Tensor<T>& t) {
  CheckpointRecord r;
  r.name = name;
  r.dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
  for (auto e : t.shape()) r.extents.push_back(static_cast<std::uint64_t>(e));
  const auto d = t.data();
  r.payload.resize(d.size() * sizeof(T));
  std::memcpy(r.payload.data(), d.data(), r.payload.size());
  records.push_back(std::move(r));
}

void Checkpoint::put_values(const std::string& name, const std::vector<double>& v) {
  put(name, Tensor<double>(Shape{static_cast<std::int64_t>(v.size())}, v));
}

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const CheckpointRecord& Checkpoint::at(const std::string& name) const {
  const auto* r = find(name);
  if (!r) throw DataError("checkpoint: missing record " + name);
  return *r;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_int(out, kCheckpointVersion);
  put_int(out, static_cast<std::uint32_t>(ck.records.size()));
  for (const auto& r : ck.records) {
    if (r.payload.size() != r.numel() * width(r.dtype)) throw ContractError("checkpoint: payload size mismatch in " + r.name);
    if (r.extents.size() > 255) throw ContractError("checkpoint: rank too large in " + r.name);
    put_text(out, r.name);
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    out.push_back(static_cast<std::uint8_t>(r.extents.size()));
    for (auto e : r.extents) put_int(out, e);
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  }
  put_text(out, ck.config);
  put_text(out, ck.rng_state);
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) in.fail("bad magic");
  in.bytes(4, "magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) in.fail("unsupported version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>("record count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = in.text("record name");
    const auto dtype = in.get<std::uint8_t>("dtype");
    if (dtype > 1) in.fail("unknown dtype " + std::to_string(dtype) + " in " + r.name);
    r.dtype = static_cast<DType>(dtype);
    const auto rank = in.get<std::uint8_t>("rank");
    for (int k = 0; k < rank; ++k) r.extents.push_back(in.get<std::uint64_t>("extent"));
    const auto n = r.numel();
    if (n > bytes.size()) in.fail("implausible extents in " + r.name);
    r.payload = in.bytes(n * width(r.dtype), "payload");
    ck.records.push_back(std::move(r));
  }
  ck.config = in.text("config");
  ck.rng_state = in.text("rng state");
  if (!in.done()) in.fail("trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

template Tensor<float> CheckpointRecord::tensor<float>() const;
template Tensor<double> CheckpointRecord::tensor<double>() const;
template void Checkpoint::put<float>(const std::string&, const Tensor<float>&);
template void Checkpoint::put<double>(const std::string&, const Tensor<double>&);

}  // namespace denseflow
