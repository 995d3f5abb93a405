// SPDX-License-Identifier: Apache-2.0
//
// Correlation and macro-averaged classification scores.

#ifndef MTLQE_METRICS_HPP_
#define MTLQE_METRICS_HPP_

#include <cstddef>
#include <span>
#include <vector>

namespace mtlqe::metrics {

// Product-moment correlation. Throws Errc::kZeroVariance when either input
// is constant, and std::invalid_argument on length mismatch or n < 2.
double pearson(std::span<const double> x, std::span<const double> y);

// Ranks with ties sharing the mean (1-based) rank.
std::vector<double> average_ranks(std::span<const double> x);

// Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

struct ConfusionCounts {
  std::vector<std::size_t> tp;
  std::vector<std::size_t> fp;
  std::vector<std::size_t> fn;
};

// Labels are class indices 0..num_classes-1; Errc::kUnknownLabel otherwise.
ConfusionCounts confusion_counts(std::span<const std::size_t> pred,
                                 std::span<const std::size_t> gold, std::size_t num_classes);

struct MacroScores {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Unweighted mean over all num_classes classes. A class with no predictions
// has precision 0, one with no gold occurrences has recall 0, and F1 is 0
// whenever precision + recall is 0. Macro F1 averages per-class F1.
MacroScores macro_prf(std::span<const std::size_t> pred, std::span<const std::size_t> gold,
                      std::size_t num_classes);

}  // namespace mtlqe::metrics

#endif  // MTLQE_METRICS_HPP_
