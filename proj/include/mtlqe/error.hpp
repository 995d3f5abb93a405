// SPDX-License-Identifier: Apache-2.0
//
// Error type shared by every mtlqe module.

#ifndef MTLQE_ERROR_HPP_
#define MTLQE_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtlqe {

enum class Errc {
  kNonSymmetric,
  kSingular,
  kZeroGradientTask,
  kNoConvergence,
  kAllZeroGradients,
  kDegenerateSystem,
  kZeroLoss,
  kSequenceTooLong,
  kSpanOutOfBounds,
  kTooFewInstances,
  kSchemaError,
  kScoreMismatch,
  kZeroVariance,
  kUnknownLabel,
  kConfigError,
  kIoError,
};

std::string_view to_string(Errc code);

// True for errors caused by bad user input (exit code 2 in the CLI).
bool is_validation_error(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace mtlqe

#endif  // MTLQE_ERROR_HPP_
