// SPDX-License-Identifier: Apache-2.0
#pragma once

// Interpretability analyses over pooled features and divergence tensors:
// class-difference maps, head ranking and ablation, tail statistics with
// bootstrap bands, word-level tail composition, and head-selection overlap.

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "attndiv/cross_validation.hpp"
#include "attndiv/divergence.hpp"
#include "attndiv/dump.hpp"
#include "attndiv/probe.hpp"

namespace attndiv {

struct HeadGrid {
  std::size_t layers = 0;
  std::size_t heads = 0;

  std::size_t size() const noexcept { return layers * heads; }
  /// Grid with `layers` rows for a feature vector of length `feature_len`.
  static HeadGrid from_layers(std::size_t feature_len, std::size_t layers);
};

struct Head {
  std::size_t layer = 0;
  std::size_t head = 0;

  auto operator<=>(const Head&) const = default;
};

// ---------------------------------------------------------------------------
// Class-difference map

/// Per (layer, head): mean feature over label 1 minus mean over label 0.
/// Layer-major, length grid.size(). Throws DegenerateLabelError if a class is
/// missing.
std::vector<double> delta_divergence_map(const Matrix& features, std::span<const int> labels, HeadGrid grid);

// ---------------------------------------------------------------------------
// Ranking and ablation

struct RankedHead {
  Head head;
  std::size_t column = 0;
  double weight = 0.0;
};

struct HeadRanking {
  /// Every head, by |weight| descending, ties by (layer, head) ascending.
  std::vector<RankedHead> order;
  /// Number of leading entries with a nonzero weight.
  std::size_t selected = 0;

  std::span<const RankedHead> selected_heads() const { return std::span(order).first(selected); }
};

HeadRanking rank_heads(const ProbeModel& model, HeadGrid grid);

/// Cross-validates with the given feature columns removed. Removing every
/// column leaves an intercept-only probe.
MetricReport ablate_features(const Matrix& X, std::span<const int> y, std::span<const std::size_t> columns,
                             const CvConfig& cfg);

/// Removes the top-k ranked heads. Throws ConfigError when k is not below the
/// feature count.
MetricReport ablate_heads(const Matrix& X, std::span<const int> y, const HeadRanking& ranking, std::size_t k,
                          const CvConfig& cfg);

enum class LayerGroup { early, middle, late };
std::string_view to_string(LayerGroup group) noexcept;
LayerGroup parse_layer_group(std::string_view text);

struct LayerRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

/// Thirds by depth: [0, ceil(L/3)), [ceil(L/3), ceil(2L/3)), [ceil(2L/3), L).
/// Throws ConfigError for L < 3.
LayerRange layer_group_range(LayerGroup group, std::size_t layers);
LayerGroup layer_group_of(std::size_t layer, std::size_t layers);

MetricReport ablate_layer_group(const Matrix& X, std::span<const int> y, HeadGrid grid, LayerGroup group,
                                const CvConfig& cfg);

// ---------------------------------------------------------------------------
// Token-level tail statistics

/// Per tensor row, the unweighted mean over all layer x head values.
std::vector<double> token_divergence(const DivergenceTensor& tensor);

/// Linear-interpolation percentile: rank (n - 1) p / 100 between order
/// statistics. Throws ValidationError for empty input or p outside [0, 100].
double percentile(std::span<const double> values, double p);

struct SurvivalCurve {
  std::vector<double> thresholds;
  std::vector<double> correct;     // P(value >= x), label 1
  std::vector<double> incorrect;   // P(value >= x), label 0
  std::vector<double> difference;  // correct - incorrect
  std::vector<double> lower;       // bootstrap band; empty without CI
  std::vector<double> upper;
  std::size_t resamples = 0;
  double level = 0.0;
};

/// Empirical survival P(v >= x) of `values` at each threshold.
std::vector<double> survival(std::span<const double> values, std::span<const double> thresholds);

/// `n_points` evenly spaced thresholds from the pooled minimum to maximum.
std::vector<double> threshold_grid(std::span<const double> a, std::span<const double> b, std::size_t n_points);

SurvivalCurve survival_curve(std::span<const double> correct, std::span<const double> incorrect,
                             std::span<const double> thresholds);

/// Adds a percentile-bootstrap band on the difference curve. Each resample
/// draws both groups with replacement, independently. The band is widened if
/// needed so that it always contains the point estimate.
SurvivalCurve survival_diff_ci(std::span<const double> correct, std::span<const double> incorrect,
                               std::span<const double> thresholds, std::size_t resamples = 1000,
                               double level = 0.95, std::uint64_t seed = 0, std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// Word-level tail composition

enum class WordAggregation { mean, max };
WordAggregation parse_word_aggregation(std::string_view text);

struct WordScore {
  std::int64_t word_id = 0;
  double value = 0.0;
};

/// Groups consecutive generated-token scalars by word id. Throws
/// AnnotationError when lengths differ or ids decrease.
std::vector<WordScore> word_aggregate(std::span<const double> token_scalars, std::span<const std::int64_t> word_ids,
                                      WordAggregation method = WordAggregation::mean);

/// Class of each word; throws AnnotationError for an unmapped id.
std::vector<WordClass> classify_words(std::span<const WordScore> words,
                                      const std::map<std::int64_t, WordClass>& classes);

struct TailComposition {
  double percentile = 99.0;
  double threshold = 0.0;
  std::size_t n_words = 0;
  std::size_t tail_size = 0;
  std::array<std::size_t, kWordClassCount> counts{};
  std::array<double, kWordClassCount> proportions{};
  std::array<double, kWordClassCount> class_mean{};  // mean scalar per class over all words
};

/// Words whose scalar is >= the p-th percentile of all word scalars.
TailComposition tail_composition(std::span<const double> word_scalars, std::span<const WordClass> classes,
                                 double p = 99.0);

// ---------------------------------------------------------------------------
// Head selections across datasets and models

struct HeadSelection {
  std::string model;
  std::string dataset;
  HeadGrid grid;
  std::map<Head, int> counts;  // e.g. number of seeds that selected the head
};

/// Counts how often each head has a nonzero weight across `models`.
HeadSelection selection_from_models(std::span<const ProbeModel> models, HeadGrid grid, std::string model_name,
                                    std::string dataset);

struct OverlapEntry {
  Head head;
  std::vector<std::string> groups;  // datasets (within a model) or models
  int total = 0;
};

struct OverlapTable {
  /// Per model, heads selected in at least two datasets.
  std::map<std::string, std::vector<OverlapEntry>> within_model;
  /// Exact (layer, head) pairs selected in at least one dataset of two or
  /// more models.
  std::vector<OverlapEntry> cross_model;
};

/// Throws DimensionError if selections of one model disagree on the grid or a
/// head lies outside its grid.
OverlapTable head_overlap(std::span<const HeadSelection> selections);

struct RegionDistribution {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> percent{};
  std::size_t total = 0;
};

/// Early/middle/late split of the pooled selected heads (one count per
/// dataset in which a head is selected).
RegionDistribution region_distribution(std::span<const HeadSelection> selections, std::size_t layers);

nlohmann::json to_json(const SurvivalCurve& curve);
nlohmann::json to_json(const TailComposition& tail);
nlohmann::json to_json(const OverlapTable& table);
nlohmann::json to_json(const RegionDistribution& regions);
nlohmann::json to_json(const HeadRanking& ranking);
std::vector<HeadSelection> selections_from_json(const nlohmann::json& j);

}  // namespace attndiv
