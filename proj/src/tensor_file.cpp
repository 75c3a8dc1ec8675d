// Copyright 2026 The birdsed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "birdsed/tensor_file.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "birdsed/error.hpp"

namespace birdsed {

namespace detail {

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void append_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void append_f32(std::vector<unsigned char>& out, float v) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  append_u32(out, bits);
}

std::uint32_t parse_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t parse_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

float parse_f32(const unsigned char* p) {
  const std::uint32_t bits = parse_u32(p);
  float v = 0.0f;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

namespace {
constexpr char kMagic[4] = {'B', 'S', 'D', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_tensor_file(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                       std::span<const float> values) {
  std::uint64_t count = 1;
  for (auto d : dims) count *= d;
  if (count != values.size()) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("tensor file: dims hold {} values, got {}", count, values.size()));
  }
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  detail::append_u32(out, kVersion);
  detail::append_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) detail::append_u64(out, d);
  out.reserve(out.size() + values.size() * 4);
  for (float v : values) detail::append_f32(out, v);
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(Errc::kIo, fmt::format("cannot write '{}'", path.string()));
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(Errc::kFileNotFound, fmt::format("cannot open '{}'", path.string()));
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(file)),
                                   std::istreambuf_iterator<char>());
  const auto corrupt = [&](std::string_view what) {
    throw Error(Errc::kCorruptFile, fmt::format("'{}': {}", path.string(), what));
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) corrupt("bad magic");
  if (detail::parse_u32(bytes.data() + 4) != kVersion) {
    throw Error(Errc::kVersionMismatch, fmt::format("'{}': unsupported version", path.string()));
  }
  const std::uint32_t ndim = detail::parse_u32(bytes.data() + 8);
  std::size_t pos = 12;
  if (bytes.size() < pos + 8ull * ndim) corrupt("truncated header");
  TensorFile tensor;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    tensor.dims.push_back(detail::parse_u64(bytes.data() + pos));
    count *= tensor.dims.back();
    pos += 8;
  }
  if (bytes.size() != pos + count * 4) corrupt("payload size does not match dims");
  tensor.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) tensor.values[i] = detail::parse_f32(bytes.data() + pos + 4 * i);
  return tensor;
}

}  // namespace birdsed
