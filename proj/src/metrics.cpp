// SPDX-License-Identifier: Apache-2.0

#include "mtlqe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mtlqe/error.hpp"

namespace mtlqe::metrics {

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw Error(Errc::kZeroVariance, "constant input");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    // Positions i..j (0-based) share ranks i+1..j+1.
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

ConfusionCounts confusion_counts(std::span<const std::size_t> pred,
                                 std::span<const std::size_t> gold, std::size_t num_classes) {
  if (pred.size() != gold.size()) throw std::invalid_argument("macro_prf: length mismatch");
  ConfusionCounts c{std::vector<std::size_t>(num_classes, 0), std::vector<std::size_t>(num_classes, 0),
                    std::vector<std::size_t>(num_classes, 0)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= num_classes || gold[i] >= num_classes) {
      throw Error(Errc::kUnknownLabel, "label " + std::to_string(std::max(pred[i], gold[i])) +
                                           " outside " + std::to_string(num_classes) + " classes");
    }
    if (pred[i] == gold[i]) {
      ++c.tp[pred[i]];
    } else {
      ++c.fp[pred[i]];
      ++c.fn[gold[i]];
    }
  }
  return c;
}

MacroScores macro_prf(std::span<const std::size_t> pred, std::span<const std::size_t> gold,
                      std::size_t num_classes) {
  if (num_classes == 0) throw std::invalid_argument("macro_prf: no classes");
  const ConfusionCounts c = confusion_counts(pred, gold, num_classes);
  MacroScores m;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double tp = static_cast<double>(c.tp[k]);
    const double predicted = tp + static_cast<double>(c.fp[k]);
    const double actual = tp + static_cast<double>(c.fn[k]);
    const double p = predicted > 0.0 ? tp / predicted : 0.0;
    const double r = actual > 0.0 ? tp / actual : 0.0;
    const double f = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    m.precision += p;
    m.recall += r;
    m.f1 += f;
  }
  const double n = static_cast<double>(num_classes);
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

}  // namespace mtlqe::metrics
