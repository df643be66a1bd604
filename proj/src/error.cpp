// SPDX-License-Identifier: Apache-2.0
#include "attndiv/error.hpp"

namespace attndiv {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::validation: return "validation";
    case ErrorCode::empty_row: return "empty_row";
    case ErrorCode::malformed_dump: return "malformed_dump";
    case ErrorCode::empty_scope: return "empty_scope";
    case ErrorCode::format: return "format";
    case ErrorCode::corruption: return "corruption";
    case ErrorCode::schema: return "schema";
    case ErrorCode::degenerate_label: return "degenerate_label";
    case ErrorCode::undefined_metric: return "undefined_metric";
    case ErrorCode::stratification: return "stratification";
    case ErrorCode::annotation: return "annotation";
    case ErrorCode::metadata: return "metadata";
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::config: return 2;
    case ErrorCode::io: return 3;
    case ErrorCode::format:
    case ErrorCode::corruption:
    case ErrorCode::malformed_dump: return 4;
    case ErrorCode::validation:
    case ErrorCode::empty_row: return 5;
    case ErrorCode::schema:
    case ErrorCode::metadata:
    case ErrorCode::annotation: return 6;
    case ErrorCode::empty_scope: return 7;
    case ErrorCode::dimension:
    case ErrorCode::degenerate_label:
    case ErrorCode::undefined_metric:
    case ErrorCode::stratification: return 8;
  }
  return 1;
}

}  // namespace attndiv
