// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace steerlab {

enum class ErrorKind {
  kValidation,
  kUnsupportedFormat,
  kFormat,
  kCorruption,
  kDuplicateKey,
  kMissingRecord,
  kContract,
  kShape,
  kDegenerateDirection,
  kEmptySet,
  kConfig,
  kInput,
  kUsage,
  kIO,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kUnsupportedFormat: return "unsupported-format";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kCorruption: return "corruption";
    case ErrorKind::kDuplicateKey: return "duplicate-key";
    case ErrorKind::kMissingRecord: return "missing-record";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kDegenerateDirection: return "degenerate-direction";
    case ErrorKind::kEmptySet: return "empty-set";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kIO: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

// CLI exit code: 3 for I/O failures, 2 for every other library error.
constexpr int exit_code_for(ErrorKind kind) { return kind == ErrorKind::kIO ? 3 : 2; }

}  // namespace steerlab
