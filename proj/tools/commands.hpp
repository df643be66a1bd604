// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "attndiv/synthetic.hpp"

namespace attndiv::cli {

struct RunConfig {
  std::filesystem::path dump;
  std::filesystem::path features;
  std::filesystem::path model;
  std::filesystem::path selections;
  std::filesystem::path out = "out";

  std::string scope = "answer";
  std::string pooling = "mean";
  double epsilon = 1e-12;

  double lambda = 1.0;
  std::size_t folds = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t jobs = 1;
  double valid_fraction = 0.2;

  std::string mode;
  std::size_t k = 0;
  std::size_t layers = 0;

  // analysis
  std::vector<double> percentiles{90.0, 95.0, 99.0};
  double tail_percentile = 99.0;
  std::string aggregation = "mean";
  std::size_t thresholds = 101;
  std::size_t resamples = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  std::size_t permutations = 20;

  SyntheticSpec synth;

  /// Drops repeated seeds, keeping first occurrences in order.
  void normalize();
  nlohmann::json to_json() const;
  /// Overwrites the fields named in `j`. Throws ConfigError for unknown keys
  /// or mistyped values.
  void merge(const nlohmann::json& j);
};

void cmd_synth(const RunConfig& cfg);
void cmd_extract_features(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_ablate(const RunConfig& cfg);
void cmd_analyze(const RunConfig& cfg);
void cmd_sanity(const RunConfig& cfg);

}  // namespace attndiv::cli
