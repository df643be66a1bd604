// SPDX-License-Identifier: Apache-2.0
#pragma once

// ADV1 attention dump format.
//
// A dump file is a sequence of example frames. Each frame is
//
//   "ADV1"                       4 bytes
//   metadata length              u32, little-endian
//   metadata                     UTF-8 JSON object
//   prefill block (optional)     for i in 1..P, l in 0..L, h in 0..H:
//                                  i float32 values
//   generated block              for t in 0..G, l in 0..L, h in 0..H:
//                                  P + t float32 values
//
// All numbers are little-endian. See docs/formats.md for the metadata keys.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attndiv/divergence.hpp"

namespace attndiv {

inline constexpr char kDumpMagic[4] = {'A', 'D', 'V', '1'};
inline constexpr int kDumpSchemaVersion = 1;

enum class WordClass { entity, number, stopword, punctuation, other };
inline constexpr std::size_t kWordClassCount = 5;

std::string_view to_string(WordClass cls) noexcept;
WordClass parse_word_class(std::string_view text);

struct DumpMetadata {
  int schema_version = kDumpSchemaVersion;
  std::string model_name;
  std::string dataset_name;
  std::string example_id;
  std::uint32_t num_layers = 0;
  std::uint32_t num_heads = 0;
  std::uint32_t prompt_len = 0;
  std::uint32_t gen_len = 0;
  bool has_prefill = false;
  std::optional<int> label;

  // Surface fields; optional so that a missing key is reported by the
  // consumer that needs it.
  std::optional<std::uint64_t> prompt_char_len;
  std::optional<std::uint64_t> raw_output_char_len;
  std::optional<bool> ends_with_punctuation;
  std::optional<std::uint64_t> digit_count;

  std::optional<std::vector<std::int64_t>> word_ids;
  std::optional<std::map<std::int64_t, WordClass>> word_classes;

  /// Keys not listed above, kept verbatim so rewrites are lossless.
  nlohmann::json extra = nlohmann::json::object();

  /// Throws MalformedDumpError when a structural invariant is violated.
  void validate() const;

  nlohmann::json to_json() const;
  static DumpMetadata from_json(const nlohmann::json& j);

  bool operator==(const DumpMetadata&) const = default;
};

struct DumpExample {
  DumpMetadata meta;
  std::vector<float> prefill;    // file order, empty unless has_prefill
  std::vector<float> generated;  // file order

  static std::size_t prefill_value_count(const DumpMetadata& meta) noexcept;
  static std::size_t generated_value_count(const DumpMetadata& meta) noexcept;

  /// Prefill rows (if any) followed by generated rows.
  std::size_t row_count() const noexcept;
  RowKind row_kind(std::size_t r) const;
  std::size_t context_length(std::size_t r) const;

  /// Attention row r for (layer, head); r indexes prefill rows first.
  std::span<const float> row(std::size_t r, std::size_t layer, std::size_t head) const;
  std::span<float> row(std::size_t r, std::size_t layer, std::size_t head);

  bool operator==(const DumpExample&) const = default;
};

struct DumpReadOptions {
  /// Check every row against the attention-row invariants.
  bool validate_rows = true;
  double sum_tolerance = kRowSumTolerance;
};

/// Streaming reader; holds at most one example in memory.
class DumpReader {
 public:
  explicit DumpReader(const std::filesystem::path& path, DumpReadOptions opts = {});

  /// Next example, or nullopt at a clean end of file.
  std::optional<DumpExample> next();

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  void read_exact(char* dst, std::size_t n, std::string_view what);

  std::ifstream in_;
  std::filesystem::path path_;
  std::uint64_t offset_ = 0;
  std::uint64_t size_ = 0;
  DumpReadOptions opts_;
};

/// Single-writer sink. Frames are flushed as they are written.
class DumpWriter {
 public:
  explicit DumpWriter(const std::filesystem::path& path, bool append = false);
  void write(const DumpExample& example);

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

void write_dump(std::span<const DumpExample> examples, const std::filesystem::path& path);
std::vector<DumpExample> read_dump(const std::filesystem::path& path, DumpReadOptions opts = {});

/// Throws ValidationError naming (row, layer, head) for the first bad row.
void validate_rows(const DumpExample& example, double sum_tolerance = kRowSumTolerance);

}  // namespace attndiv
