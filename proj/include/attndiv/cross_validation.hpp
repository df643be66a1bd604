// SPDX-License-Identifier: Apache-2.0
#pragma once

// Stratified k-fold plans, label permutation, and seeds x folds evaluation of
// the probe.

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "attndiv/probe.hpp"

namespace attndiv {

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> fold_of;  // fold index per example position

  std::vector<std::size_t> members(std::size_t fold) const;
};

/// Shuffles each class with MT19937-64(seed) and deals its members
/// round-robin, continuing the deal across classes (label 0 first).
/// Throws StratificationError when a class has fewer than k members.
FoldPlan stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed);

/// Stratified train/validation split; `valid_fraction` of each class,
/// rounded, goes to validation.
struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
};
HoldoutSplit stratified_holdout(std::span<const int> labels, double valid_fraction, std::uint64_t seed);

/// Uniform random permutation of the labels, deterministic per seed.
std::vector<int> permute_labels(std::span<const int> labels, std::uint64_t seed);

struct MetricCell {
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::size_t n_train = 0;
  std::size_t n_valid = 0;
  double auroc = 0.0;
  double accuracy = 0.0;
  double ece = 0.0;
  int iterations = 0;

  bool operator==(const MetricCell&) const = default;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over cells

  bool operator==(const MeanStd&) const = default;
};

struct MetricReport {
  std::vector<MetricCell> cells;  // seed-major, then fold
  MeanStd auroc;
  MeanStd accuracy;
  MeanStd ece;

  bool operator==(const MetricReport&) const = default;
};

MeanStd mean_std(std::span<const double> values);
MetricReport aggregate(std::vector<MetricCell> cells);

struct CvConfig {
  TrainConfig probe;
  std::size_t folds = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t ece_bins = 10;
  double threshold = 0.5;
  /// Worker threads for seed x fold cells; results do not depend on it.
  std::size_t jobs = 1;
};

/// Fits the probe on k-1 folds and scores the held-out fold, for every seed.
MetricReport cross_validate(const Matrix& X, std::span<const int> y, const CvConfig& cfg);

/// One stratified split per seed; cell.fold is always 0.
MetricReport holdout_validate(const Matrix& X, std::span<const int> y, const CvConfig& cfg,
                              double valid_fraction = 0.2);

/// Rows of X at the given positions.
Matrix select_rows(const Matrix& X, std::span<const std::size_t> rows);
/// X without the given columns.
Matrix drop_columns(const Matrix& X, std::span<const std::size_t> columns);

nlohmann::json to_json(const MetricReport& report);

}  // namespace attndiv
