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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace birdsed {

/// Portable dump of a dense float tensor.
///
/// Layout (all little-endian):
///   "BSDT"            4-byte magic
///   u32 version       currently 1
///   u32 ndim
///   u64 dims[ndim]
///   f32 payload[prod(dims)], row-major
struct TensorFile {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;
};

void write_tensor_file(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                       std::span<const float> values);
TensorFile read_tensor_file(const std::filesystem::path& path);

namespace detail {
void append_u32(std::vector<unsigned char>& out, std::uint32_t v);
void append_u64(std::vector<unsigned char>& out, std::uint64_t v);
void append_f32(std::vector<unsigned char>& out, float v);
std::uint32_t parse_u32(const unsigned char* p);
std::uint64_t parse_u64(const unsigned char* p);
float parse_f32(const unsigned char* p);
}  // namespace detail

}  // namespace birdsed
