#include "postkit/error.hpp"

namespace postkit {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kIoFailure: return "IoFailure";
    case Errc::kMalformedHeader: return "MalformedHeader";
    case Errc::kOverlappingOffsets: return "OverlappingOffsets";
    case Errc::kTruncatedPayload: return "TruncatedPayload";
    case Errc::kNonFiniteValue: return "NonFiniteValue";
    case Errc::kIncompatibleCheckpoints: return "IncompatibleCheckpoints";
    case Errc::kZeroWeightSum: return "ZeroWeightSum";
    case Errc::kInvalidDensity: return "InvalidDensity";
    case Errc::kProbabilityOutOfRange: return "ProbabilityOutOfRange";
    case Errc::kInvalidConsensusK: return "InvalidConsensusK";
    case Errc::kSyntaxError: return "SyntaxError";
    case Errc::kUnknownMethod: return "UnknownMethod";
    case Errc::kDuplicateNodeId: return "DuplicateNodeId";
    case Errc::kUnknownField: return "UnknownField";
    case Errc::kInvalidRecipe: return "InvalidRecipe";
    case Errc::kMissingInput: return "MissingInput";
    case Errc::kBudgetInfeasible: return "BudgetInfeasible";
    case Errc::kRatioSumInvalid: return "RatioSumInvalid";
    case Errc::kOutOfRange: return "OutOfRange";
    case Errc::kEmptyCorpus: return "EmptyCorpus";
    case Errc::kSingleLabel: return "SingleLabel";
    case Errc::kEmptyText: return "EmptyText";
    case Errc::kNotEnoughResponses: return "NotEnoughResponses";
  }
  return "Unknown";
}

}  // namespace postkit
