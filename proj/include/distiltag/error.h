#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace distiltag {

// Coarse error categories. The CLI prints the category name as the first
// token of its one-line error report, so names are part of the interface.
enum class ErrorKind {
  kParse,
  kRange,
  kDimension,
  kParameter,
  kDomain,
  kIndex,
  kContract,
  kEmptySequence,
  kFormat,
  kCorruption,
  kIo,
  kConfig,
  kCoverage,
  kAlignment,
  kLookup,
  kUsage,
};

constexpr std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kRange: return "range";
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kParameter: return "parameter";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kEmptySequence: return "empty-sequence";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kCorruption: return "corruption";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kCoverage: return "coverage";
    case ErrorKind::kAlignment: return "alignment";
    case ErrorKind::kLookup: return "lookup";
    case ErrorKind::kUsage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace distiltag
