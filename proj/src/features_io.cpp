// SPDX-License-Identifier: Apache-2.0
#include "attndiv/features_io.hpp"

#include <cmath>
#include <fstream>
#include <istream>

#include <json.hpp>

#include "attndiv/error.hpp"

namespace attndiv {
namespace {

using nlohmann::json;

void check_width(std::size_t expected, std::size_t got, std::size_t line_no) {
  if (expected != got) {
    throw SchemaError("feature length " + std::to_string(got) + " on line " + std::to_string(line_no) +
                      " differs from " + std::to_string(expected) + " on the first line");
  }
}

}  // namespace

std::string to_json_line(const FeatureRecord& r) {
  for (double v : r.features) {
    if (!std::isfinite(v)) throw ValidationError("non-finite feature in record '" + r.example_id + "'");
  }
  json j;
  j["example_id"] = r.example_id;
  j["label"] = r.label;
  j["scope"] = std::string(to_string(r.scope));
  j["pooling"] = std::string(to_string(r.pooling));
  j["features"] = r.features;
  return j.dump();
}

FeatureRecord parse_feature_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("feature line is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("feature line is not a JSON object");
  for (const char* key : {"example_id", "label", "scope", "pooling", "features"}) {
    if (!j.contains(key)) throw SchemaError(std::string("feature record is missing '") + key + "'");
  }
  FeatureRecord r;
  try {
    r.example_id = j.at("example_id").get<std::string>();
    r.label = j.at("label").get<int>();
    r.features = j.at("features").get<std::vector<double>>();
    r.scope = parse_scope(j.at("scope").get<std::string>());
    r.pooling = parse_pooling(j.at("pooling").get<std::string>());
  } catch (const json::exception& e) {
    throw SchemaError(std::string("feature record has a field of the wrong type: ") + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError(e.what());
  }
  if (r.label != 0 && r.label != 1) {
    throw SchemaError("label of record '" + r.example_id + "' must be 0 or 1");
  }
  return r;
}

void write_features(std::span<const FeatureRecord> records, const std::filesystem::path& path,
                    bool append) {
  std::size_t width = records.empty() ? 0 : records.front().features.size();
  if (append && std::filesystem::exists(path)) {
    const auto existing = read_features(path);
    if (!existing.empty() && !records.empty()) check_width(existing.front().features.size(), width, 1);
  }
  for (std::size_t i = 0; i < records.size(); ++i) check_width(width, records[i].features.size(), i + 1);

  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) out << to_json_line(r) << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::vector<FeatureRecord> read_features(std::istream& in) {
  std::vector<FeatureRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto record = parse_feature_line(line);
    if (!out.empty()) check_width(out.front().features.size(), record.features.size(), line_no);
    out.push_back(std::move(record));
  }
  return out;
}

std::vector<FeatureRecord> read_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file '" + path.string() + "'");
  return read_features(in);
}

Matrix feature_matrix(std::span<const FeatureRecord> records) {
  const std::size_t width = records.empty() ? 0 : records.front().features.size();
  Matrix X(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < records.size(); ++i) {
    check_width(width, records[i].features.size(), i + 1);
    for (std::size_t j = 0; j < width; ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = records[i].features[j];
  }
  return X;
}

std::vector<int> labels_of(std::span<const FeatureRecord> records) {
  std::vector<int> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.label);
  return y;
}

}  // namespace attndiv
