// SPDX-License-Identifier: Apache-2.0
#include "attndiv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "attndiv/error.hpp"

namespace attndiv {
namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": " + std::to_string(a) + " scores but " + std::to_string(b) +
                         " labels");
  }
}

void require_binary(std::span<const int> labels) {
  for (int v : labels)
    if (v != 0 && v != 1) throw ValidationError("labels must be 0 or 1");
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores.size(), labels.size(), "auroc");
  require_binary(labels);
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUROC needs both classes");
  for (double s : scores)
    if (std::isnan(s)) throw ValidationError("AUROC scores contain NaN");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positives, kept doubled so it stays integral.
  std::size_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::size_t twice_midrank = (i + 1) + j;  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) twice_rank_sum += twice_midrank;
    i = j;
  }
  const double u = static_cast<double>(twice_rank_sum) / 2.0 - static_cast<double>(n_pos * (n_pos + 1)) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<ReliabilityBin> reliability_bins(std::span<const double> probs, std::span<const int> labels,
                                             std::size_t n_bins) {
  require_same_length(probs.size(), labels.size(), "ece");
  require_binary(labels);
  if (probs.empty()) throw ValidationError("calibration metrics need at least one example");
  if (n_bins < 1) throw ConfigError("n_bins must be >= 1");

  std::vector<double> edges(n_bins + 1);
  for (std::size_t k = 0; k <= n_bins; ++k) edges[k] = static_cast<double>(k) / static_cast<double>(n_bins);

  std::vector<ReliabilityBin> bins(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0), label_sum(n_bins, 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("probabilities must lie in [0, 1]");
    // First bin whose closed upper edge holds p.
    const auto it = std::lower_bound(edges.begin() + 1, edges.end(), p);
    const auto b = static_cast<std::size_t>(it - (edges.begin() + 1));
    ++bins[b].count;
    conf_sum[b] += p;
    label_sum[b] += labels[i];
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lower = edges[b];
    bins[b].upper = edges[b + 1];
    if (bins[b].count > 0) {
      bins[b].confidence = conf_sum[b] / static_cast<double>(bins[b].count);
      bins[b].accuracy = label_sum[b] / static_cast<double>(bins[b].count);
    }
  }
  return bins;
}

double ece(std::span<const double> probs, std::span<const int> labels, std::size_t n_bins) {
  const auto bins = reliability_bins(probs, labels, n_bins);
  const double n = static_cast<double>(probs.size());
  double total = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    total += static_cast<double>(b.count) / n * std::abs(b.accuracy - b.confidence);
  }
  return total;
}

double accuracy(std::span<const double> probs, std::span<const int> labels, double threshold) {
  require_same_length(probs.size(), labels.size(), "accuracy");
  require_binary(labels);
  if (probs.empty()) throw ValidationError("accuracy needs at least one example");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int predicted = probs[i] >= threshold ? 1 : 0;
    hits += predicted == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

}  // namespace attndiv
