#include "clipq/error.hpp"

namespace clipq {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kZeroNorm: return "zero norm";
    case ErrorCode::kBatchTooSmall: return "batch too small";
    case ErrorCode::kClippingExhaustsNegatives:
      return "clipping exhausts negatives";
    case ErrorCode::kEmptyInput: return "empty input";
    case ErrorCode::kIndexOutOfRange: return "index out of range";
    case ErrorCode::kVocabularyMismatch: return "vocabulary mismatch";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported version";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kChecksumMismatch: return "checksum mismatch";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kNonFiniteGradient: return "non-finite gradient";
  }
  return "unknown error";
}

}  // namespace clipq
