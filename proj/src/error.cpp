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

#include "birdsed/error.hpp"

namespace birdsed {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::kFileNotFound: return "file not found";
    case Errc::kUnsupportedFormat: return "unsupported format";
    case Errc::kTruncatedFile: return "truncated file";
    case Errc::kInvalidArgument: return "invalid argument";
    case Errc::kLengthMismatch: return "length mismatch";
    case Errc::kEmptyInput: return "empty input";
    case Errc::kTooShort: return "input too short";
    case Errc::kEmptyFilter: return "empty mel filter";
    case Errc::kShapeMismatch: return "shape mismatch";
    case Errc::kSilentInput: return "silent input";
    case Errc::kNotScored: return "partner is not a scored species";
    case Errc::kMalformedRow: return "malformed row";
    case Errc::kNonFinite: return "non-finite value";
    case Errc::kMissingCache: return "missing activation cache";
    case Errc::kVersionMismatch: return "version mismatch";
    case Errc::kCorruptFile: return "corrupt file";
    case Errc::kDegenerateLabels: return "degenerate labels";
    case Errc::kKeyMismatch: return "key mismatch";
    case Errc::kMissingThreshold: return "missing threshold";
    case Errc::kIo: return "i/o error";
  }
  return "unknown";
}

}  // namespace birdsed
