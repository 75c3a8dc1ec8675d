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

#include <stdexcept>
#include <string>
#include <string_view>

namespace birdsed {

enum class Errc {
  // audio-io
  kFileNotFound,
  kUnsupportedFormat,
  kTruncatedFile,
  kInvalidArgument,
  kLengthMismatch,
  kEmptyInput,
  // dsp
  kTooShort,
  kEmptyFilter,
  // augment / dataset
  kShapeMismatch,
  kSilentInput,
  kNotScored,
  kMalformedRow,
  // model / train
  kNonFinite,
  kMissingCache,
  kVersionMismatch,
  kCorruptFile,
  // calibrate / metrics
  kDegenerateLabels,
  kKeyMismatch,
  kMissingThreshold,
  kIo,
};

std::string_view to_string(Errc code);

/// Every failure raised by the library. `code()` distinguishes the cases a
/// caller may want to branch on; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace birdsed
