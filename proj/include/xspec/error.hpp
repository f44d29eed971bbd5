/* Copyright 2026 The xspec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xspec {

enum class Errc {
  kMalformedFile,
  kShapeMismatch,
  kDuplicateId,
  kIoError,
  kInvalidConfig,
  kInvalidParams,
  kEmptyCluster,
  kSingleCluster,
  kBadLabel,
  kDomainMismatch,
  kDimMismatch,
  kNoNegativeAvailable,
  kNoAssociations,
  kLabelMissing,
  kEmptyInput,
};

std::string_view errc_name(Errc code);

// All library failures are reported as xspec::Error carrying a code that
// callers (notably the CLI exit-code map) can switch on.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kMalformedFile: return "MalformedFile";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kDuplicateId: return "DuplicateId";
    case Errc::kIoError: return "IoError";
    case Errc::kInvalidConfig: return "InvalidConfig";
    case Errc::kInvalidParams: return "InvalidParams";
    case Errc::kEmptyCluster: return "EmptyCluster";
    case Errc::kSingleCluster: return "SingleCluster";
    case Errc::kBadLabel: return "BadLabel";
    case Errc::kDomainMismatch: return "DomainMismatch";
    case Errc::kDimMismatch: return "DimMismatch";
    case Errc::kNoNegativeAvailable: return "NoNegativeAvailable";
    case Errc::kNoAssociations: return "NoAssociations";
    case Errc::kLabelMissing: return "LabelMissing";
    case Errc::kEmptyInput: return "EmptyInput";
  }
  return "Unknown";
}

}  // namespace xspec
