// SPDX-License-Identifier: Apache-2.0
#pragma once

// Line-delimited JSON feature files. One record per line:
//   {"example_id": ..., "features": [...], "label": 0|1, "pooling": ..., "scope": ...}

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "attndiv/divergence.hpp"
#include "attndiv/probe.hpp"

namespace attndiv {

struct FeatureRecord {
  std::string example_id;
  int label = 0;
  Scope scope = Scope::answer;
  Pooling pooling = Pooling::mean;
  std::vector<double> features;

  bool operator==(const FeatureRecord&) const = default;
};

std::string to_json_line(const FeatureRecord& record);
FeatureRecord parse_feature_line(const std::string& line);

/// Truncates unless `append`. Throws SchemaError if the records disagree on
/// feature length, or if an appended file already holds another length.
void write_features(std::span<const FeatureRecord> records, const std::filesystem::path& path,
                    bool append = false);

/// Throws SchemaError on a malformed line, a missing key, or a feature length
/// that differs from the first record.
std::vector<FeatureRecord> read_features(const std::filesystem::path& path);
std::vector<FeatureRecord> read_features(std::istream& in);

/// Stacks feature vectors into rows. Throws SchemaError on mixed lengths.
Matrix feature_matrix(std::span<const FeatureRecord> records);
std::vector<int> labels_of(std::span<const FeatureRecord> records);

}  // namespace attndiv
