// SPDX-License-Identifier: Apache-2.0
#include "attndiv/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "attndiv/error.hpp"

namespace attndiv {
namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != headers.size()) throw DimensionError("table row width differs from header");
  rows.push_back(std::move(row));
}

std::string format_number(double value, int digits) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  std::string s = buf;
  // "-0.0000" would make reruns look different for values of either sign
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

std::string to_csv(const Table& table) {
  std::ostringstream out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_field(cells[i]);
    out << '\n';
  };
  line(table.headers);
  for (const auto& r : table.rows) line(r);
  return out.str();
}

std::string to_text(const Table& table) {
  std::vector<std::size_t> width(table.headers.size());
  for (std::size_t i = 0; i < width.size(); ++i) width[i] = table.headers[i].size();
  for (const auto& r : table.rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());

  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += "  ";
      s += cells[i];
      if (i + 1 < cells.size()) s.append(width[i] - cells[i].size(), ' ');
    }
    out << s << '\n';
  };
  line(table.headers);
  std::vector<std::string> rule;
  for (auto w : width) rule.emplace_back(w, '-');
  line(rule);
  for (const auto& r : table.rows) line(r);
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace attndiv
