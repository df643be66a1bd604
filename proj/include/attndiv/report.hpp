// SPDX-License-Identifier: Apache-2.0
#pragma once

// Report writers: JSON documents, CSV, and aligned plain-text tables.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace attndiv {

struct Table {
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
};

/// Fixed-point with `digits` decimals; "nan"/"inf" spelled out.
std::string format_number(double value, int digits = 4);

std::string to_csv(const Table& table);
/// Left-aligned text columns separated by two spaces, with a dashed rule
/// under the header.
std::string to_text(const Table& table);

/// Creates parent directories. Throws IoError on failure.
void write_file(const std::filesystem::path& path, const std::string& content);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace attndiv
