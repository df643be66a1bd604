// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace attndiv {

/// Probability that a random positive outranks a random negative, ties
/// counting one half (Mann-Whitney U with midranks). Throws
/// UndefinedMetricError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double confidence = 0.0;  // mean predicted probability
  double accuracy = 0.0;    // mean label
};

/// Equal-width bins on [0, 1]: bin 0 is [0, 1/n], bin k > 0 is (k/n, (k+1)/n].
std::vector<ReliabilityBin> reliability_bins(std::span<const double> probs, std::span<const int> labels,
                                             std::size_t n_bins = 10);

/// sum_b (n_b / N) |acc_b - conf_b| over the reliability bins.
double ece(std::span<const double> probs, std::span<const int> labels, std::size_t n_bins = 10);

/// Fraction of examples with (prob >= threshold) == label.
double accuracy(std::span<const double> probs, std::span<const int> labels, double threshold = 0.5);

}  // namespace attndiv
