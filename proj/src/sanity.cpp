// SPDX-License-Identifier: Apache-2.0
#include "attndiv/sanity.hpp"

#include <array>

#include "attndiv/error.hpp"
#include "attndiv/metrics.hpp"
#include "attndiv/parallel.hpp"

namespace attndiv {
namespace {

constexpr std::array kSurfaceFeatures = {SurfaceFeature::gen_len, SurfaceFeature::prompt_len,
                                         SurfaceFeature::raw_output_len, SurfaceFeature::ends_with_punctuation,
                                         SurfaceFeature::digit_count};

template <typename T>
double required(const std::optional<T>& field, const DumpMetadata& meta, std::string_view name) {
  if (!field) throw MetadataError("example '" + meta.example_id + "' has no " + std::string(name));
  return static_cast<double>(*field);
}

}  // namespace

std::string_view to_string(SurfaceFeature f) noexcept {
  switch (f) {
    case SurfaceFeature::gen_len: return "generation_length";
    case SurfaceFeature::prompt_len: return "prompt_length";
    case SurfaceFeature::raw_output_len: return "raw_output_length";
    case SurfaceFeature::ends_with_punctuation: return "final_punctuation";
    case SurfaceFeature::digit_count: return "digit_count";
  }
  return "?";
}

SurfaceFeature parse_surface_feature(std::string_view text) {
  for (auto f : kSurfaceFeatures)
    if (to_string(f) == text) return f;
  throw ConfigError("unknown surface feature '" + std::string(text) + "'");
}

double surface_value(const DumpMetadata& meta, SurfaceFeature f) {
  switch (f) {
    case SurfaceFeature::gen_len: return meta.gen_len;
    case SurfaceFeature::prompt_len: return meta.prompt_len;
    case SurfaceFeature::raw_output_len: return required(meta.raw_output_char_len, meta, "raw_output_char_len");
    case SurfaceFeature::ends_with_punctuation:
      return required(meta.ends_with_punctuation, meta, "ends_with_punctuation");
    case SurfaceFeature::digit_count: return required(meta.digit_count, meta, "digit_count");
  }
  return 0.0;
}

double baseline_auroc(SurfaceFeature f, std::span<const DumpMetadata> metadata, std::span<const int> labels) {
  if (metadata.size() != labels.size()) throw DimensionError("metadata and labels differ in count");
  std::vector<double> scores;
  scores.reserve(metadata.size());
  for (const auto& m : metadata) scores.push_back(surface_value(m, f));
  return auroc(scores, labels);
}

std::vector<SanityRow> run_sanity_suite(std::span<const DumpMetadata> metadata, const Matrix& features,
                                        std::span<const int> labels, const SanityConfig& cfg) {
  if (cfg.permutations == 0) throw ConfigError("sanity suite needs at least one permutation");
  std::vector<SanityRow> rows(kSurfaceFeatureCount);
  parallel_for(kSurfaceFeatureCount, cfg.cv.jobs, [&](std::size_t i) {
    rows[i] = {std::string(to_string(kSurfaceFeatures[i])), baseline_auroc(kSurfaceFeatures[i], metadata, labels), 0.0};
  });

  std::vector<double> perm(cfg.permutations);
  for (std::size_t p = 0; p < cfg.permutations; ++p) {
    const auto shuffled = permute_labels(labels, cfg.seed + p);
    perm[p] = cross_validate(features, shuffled, cfg.cv).auroc.mean;
  }
  const auto ms = mean_std(perm);
  rows.push_back({"permuted_labels", ms.mean, ms.std});
  return rows;
}

nlohmann::json to_json(std::span<const SanityRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back({{"feature", r.name}, {"auroc", r.auroc}, {"std", r.std}});
  return out;
}

}  // namespace attndiv
