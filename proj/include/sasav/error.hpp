#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sasav {

enum class Errc {
  kIoFailure,
  kFileSizeMismatch,
  kUnsupportedScalarKind,
  kInvalidMetadata,
  kDegenerateRange,
  kEmptyRecords,
  kTooFewAnchors,
  kProviderUnavailable,
  kFixtureMiss,
  kParseFailure,
  kInvalidOverlap,
  kAdapterUnavailable,
  kAllEvaluationsFailed,
  kInvalidArgument,
  kInvalidConfig,
  kEmptyContent,
};

std::string_view to_string(Errc code) noexcept;

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace sasav
