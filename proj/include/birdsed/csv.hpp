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

#include <filesystem>
#include <string>
#include <vector>

namespace birdsed {

/// Minimal comma-separated reader: no quoting, one record per line, first
/// line is the header. Fields are whitespace-trimmed.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line of each row (header is line 1).
  std::vector<int> line_numbers;

  /// Column index by name; throws kMalformedRow when missing.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Writes `text` atomically enough for our purposes: truncate then write.
void write_text_file(const std::filesystem::path& path, const std::string& text);

double parse_double_field(const std::string& field, const std::string& context);
long long parse_int_field(const std::string& field, const std::string& context);

}  // namespace birdsed
