// SPDX-License-Identifier: Apache-2.0
#pragma once

// Surface-feature baselines and the label-permutation control.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "attndiv/cross_validation.hpp"
#include "attndiv/dump.hpp"

namespace attndiv {

enum class SurfaceFeature { gen_len, prompt_len, raw_output_len, ends_with_punctuation, digit_count };
inline constexpr std::size_t kSurfaceFeatureCount = 5;

std::string_view to_string(SurfaceFeature f) noexcept;
SurfaceFeature parse_surface_feature(std::string_view text);

/// Value of `f` for one example. Lengths are token counts except
/// raw_output_len, which counts characters. Throws MetadataError when the
/// field is missing.
double surface_value(const DumpMetadata& meta, SurfaceFeature f);

/// AUROC of the raw scalar against the labels. Sees metadata only.
double baseline_auroc(SurfaceFeature f, std::span<const DumpMetadata> metadata, std::span<const int> labels);

struct SanityRow {
  std::string name;
  double auroc = 0.0;
  double std = 0.0;  // spread over permutations; 0 for surface rows
};

struct SanityConfig {
  CvConfig cv;
  std::size_t permutations = 20;
  std::uint64_t seed = 0;
};

/// Five surface rows followed by the probe's CV AUROC on permuted labels,
/// averaged over `permutations` shuffles. Deterministic per seed.
std::vector<SanityRow> run_sanity_suite(std::span<const DumpMetadata> metadata, const Matrix& features,
                                        std::span<const int> labels, const SanityConfig& cfg);

nlohmann::json to_json(std::span<const SanityRow> rows);

}  // namespace attndiv
