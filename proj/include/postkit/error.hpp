#pragma once

#include <stdexcept>
#include <string>

namespace postkit {

// Stable error categories. The C API maps these one-to-one onto pk_status.
enum class Errc {
  kInvalidArgument = 1,
  kIoFailure,
  kMalformedHeader,
  kOverlappingOffsets,
  kTruncatedPayload,
  kNonFiniteValue,
  kIncompatibleCheckpoints,
  kZeroWeightSum,
  kInvalidDensity,
  kProbabilityOutOfRange,
  kInvalidConsensusK,
  kSyntaxError,
  kUnknownMethod,
  kDuplicateNodeId,
  kUnknownField,
  kInvalidRecipe,
  kMissingInput,
  kBudgetInfeasible,
  kRatioSumInvalid,
  kOutOfRange,
  kEmptyCorpus,
  kSingleLabel,
  kEmptyText,
  kNotEnoughResponses,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace postkit
