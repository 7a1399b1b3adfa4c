#include "sasav/error.hpp"

namespace sasav {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::kIoFailure: return "IoFailure";
    case Errc::kFileSizeMismatch: return "FileSizeMismatch";
    case Errc::kUnsupportedScalarKind: return "UnsupportedScalarKind";
    case Errc::kInvalidMetadata: return "InvalidMetadata";
    case Errc::kDegenerateRange: return "DegenerateRange";
    case Errc::kEmptyRecords: return "EmptyRecords";
    case Errc::kTooFewAnchors: return "TooFewAnchors";
    case Errc::kProviderUnavailable: return "ProviderUnavailable";
    case Errc::kFixtureMiss: return "FixtureMiss";
    case Errc::kParseFailure: return "ParseFailure";
    case Errc::kInvalidOverlap: return "InvalidOverlap";
    case Errc::kAdapterUnavailable: return "AdapterUnavailable";
    case Errc::kAllEvaluationsFailed: return "AllEvaluationsFailed";
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kInvalidConfig: return "InvalidConfig";
    case Errc::kEmptyContent: return "EmptyContent";
  }
  return "Unknown";
}

}  // namespace sasav
