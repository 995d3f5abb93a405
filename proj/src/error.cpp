// SPDX-License-Identifier: Apache-2.0

#include "mtlqe/error.hpp"

namespace mtlqe {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::kNonSymmetric: return "NonSymmetric";
    case Errc::kSingular: return "Singular";
    case Errc::kZeroGradientTask: return "ZeroGradientTask";
    case Errc::kNoConvergence: return "NoConvergence";
    case Errc::kAllZeroGradients: return "AllZeroGradients";
    case Errc::kDegenerateSystem: return "DegenerateSystem";
    case Errc::kZeroLoss: return "ZeroLoss";
    case Errc::kSequenceTooLong: return "SequenceTooLong";
    case Errc::kSpanOutOfBounds: return "SpanOutOfBounds";
    case Errc::kTooFewInstances: return "TooFewInstances";
    case Errc::kSchemaError: return "SchemaError";
    case Errc::kScoreMismatch: return "ScoreMismatch";
    case Errc::kZeroVariance: return "ZeroVariance";
    case Errc::kUnknownLabel: return "UnknownLabel";
    case Errc::kConfigError: return "ConfigError";
    case Errc::kIoError: return "IoError";
  }
  return "Unknown";
}

bool is_validation_error(Errc code) {
  switch (code) {
    case Errc::kSpanOutOfBounds:
    case Errc::kTooFewInstances:
    case Errc::kSchemaError:
    case Errc::kScoreMismatch:
    case Errc::kUnknownLabel:
    case Errc::kConfigError:
    case Errc::kSequenceTooLong:
      return true;
    default:
      return false;
  }
}

}  // namespace mtlqe
