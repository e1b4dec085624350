#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace clipq {

enum class ErrorCode {
  kDimensionMismatch,
  kNonFinite,
  kInvalidArgument,
  kZeroNorm,
  kBatchTooSmall,
  kClippingExhaustsNegatives,
  kEmptyInput,
  kIndexOutOfRange,
  kVocabularyMismatch,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kChecksumMismatch,
  kIo,
  kNonFiniteGradient,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the engine carries one of the codes above so
/// callers (and the CLI exit path) can tell error paths apart.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace clipq
