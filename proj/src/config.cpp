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

#include "birdsed/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "birdsed/error.hpp"

namespace birdsed {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::string format_double(double value) { return fmt::format("{}", value); }

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::kMalformedRow,
                  fmt::format("config line {}: expected 'key = value'", line_no));
    }
    std::string key = trim(std::string_view(stripped).substr(0, eq));
    std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) {
      throw Error(Errc::kMalformedRow, fmt::format("config line {}: empty key", line_no));
    }
    config.entries_[std::move(key)] = std::move(value);
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::kFileNotFound, fmt::format("cannot open config '{}'", path.string()));
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string KeyValueConfig::serialize() const {
  std::string out;
  for (const auto& [key, value] : entries_) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kIo, fmt::format("cannot write '{}'", path.string()));
  out << serialize();
}

bool KeyValueConfig::contains(const std::string& key) const {
  return entries_.count(key) != 0;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

void KeyValueConfig::set(const std::string& key, double value) {
  entries_[key] = format_double(value);
}

void KeyValueConfig::set(const std::string& key, long long value) {
  entries_[key] = std::to_string(value);
}

void KeyValueConfig::set(const std::string& key, bool value) {
  entries_[key] = value ? "true" : "false";
}

std::optional<std::string> KeyValueConfig::find(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  return find(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  // std::from_chars for double is available from GCC 11.
  double out = 0.0;
  const char* begin = v->data();
  const char* end = begin + v->size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error(Errc::kInvalidArgument,
                fmt::format("config key '{}': '{}' is not a number", key, *v));
  }
  return out;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  long long out = 0;
  const char* begin = v->data();
  const char* end = begin + v->size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error(Errc::kInvalidArgument,
                fmt::format("config key '{}': '{}' is not an integer", key, *v));
  }
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "on" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "off" || *v == "no") return false;
  throw Error(Errc::kInvalidArgument,
              fmt::format("config key '{}': '{}' is not a boolean", key, *v));
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  auto v = find(key);
  if (!v) return out;
  std::istringstream in(*v);
  std::string item;
  while (in >> item) out.push_back(item);
  return out;
}

std::vector<std::string> KeyValueConfig::unknown_keys(
    const std::vector<std::string>& known) const {
  std::vector<std::string> out;
  for (const auto& [key, value] : entries_) {
    if (std::find(known.begin(), known.end(), key) == known.end()) out.push_back(key);
  }
  return out;
}

}  // namespace birdsed
