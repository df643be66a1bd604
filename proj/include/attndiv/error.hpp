// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace attndiv {

enum class ErrorCode {
  dimension,
  validation,
  empty_row,
  malformed_dump,
  empty_scope,
  format,
  corruption,
  schema,
  degenerate_label,
  undefined_metric,
  stratification,
  annotation,
  metadata,
  config,
  io,
};

/// Stable machine-readable name, used in CLI error lines.
std::string_view error_code_name(ErrorCode code) noexcept;

/// Process exit code for a failed CLI command.
int exit_code_for(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

template <ErrorCode C>
class CodedError : public Error {
 public:
  explicit CodedError(const std::string& what) : Error(C, what) {}
};

using DimensionError = CodedError<ErrorCode::dimension>;
using EmptyRowError = CodedError<ErrorCode::empty_row>;
using MalformedDumpError = CodedError<ErrorCode::malformed_dump>;
using EmptyScopeError = CodedError<ErrorCode::empty_scope>;
using FormatError = CodedError<ErrorCode::format>;
using SchemaError = CodedError<ErrorCode::schema>;
using DegenerateLabelError = CodedError<ErrorCode::degenerate_label>;
using UndefinedMetricError = CodedError<ErrorCode::undefined_metric>;
using StratificationError = CodedError<ErrorCode::stratification>;
using AnnotationError = CodedError<ErrorCode::annotation>;
using MetadataError = CodedError<ErrorCode::metadata>;
using ConfigError = CodedError<ErrorCode::config>;
using IoError = CodedError<ErrorCode::io>;

/// Position of an attention row inside a dump example.
struct RowLocation {
  std::size_t row = 0;
  std::size_t layer = 0;
  std::size_t head = 0;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorCode::validation, what) {}
  ValidationError(const std::string& what, RowLocation where)
      : Error(ErrorCode::validation, what), where_(where) {}

  const std::optional<RowLocation>& location() const noexcept { return where_; }

 private:
  std::optional<RowLocation> where_;
};

class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, std::uint64_t byte_offset)
      : Error(ErrorCode::corruption, what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}

  std::uint64_t byte_offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace attndiv
