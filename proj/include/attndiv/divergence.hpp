// SPDX-License-Identifier: Apache-2.0
#pragma once

// KL divergence of attention rows against the uniform reference and pooling
// of per-row divergences into one feature per (layer, head).
//
// All values are in nats. Accumulation is double precision regardless of the
// storage type of the row.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attndiv {

struct DumpExample;

enum class Scope { prompt, answer, full };
enum class Pooling { mean, max };
enum class RowKind : std::uint8_t { prompt, generated };

std::string_view to_string(Scope scope) noexcept;
std::string_view to_string(Pooling pooling) noexcept;
std::string_view to_string(RowKind kind) noexcept;
Scope parse_scope(std::string_view text);
Pooling parse_pooling(std::string_view text);

/// Default sum tolerance of an attention row, sized for float32 storage.
inline constexpr double kRowSumTolerance = 1e-3;

struct DivergenceConfig {
  /// Floor applied to log arguments only; rows are never renormalized.
  double epsilon = 1e-12;

  void validate() const;
};

/// Checks the attention-row invariants: non-empty, finite, non-negative and
/// summing to one within `sum_tolerance`. Returns a description of the first
/// violation, or nullopt for a valid row.
std::optional<std::string> check_attention_row(std::span<const float> p,
                                               double sum_tolerance = kRowSumTolerance);
std::optional<std::string> check_attention_row(std::span<const double> p,
                                               double sum_tolerance = kRowSumTolerance);

/// Shannon entropy -sum p ln p with 0 ln 0 = 0.
double entropy(std::span<const float> p, const DivergenceConfig& cfg = {});
double entropy(std::span<const double> p, const DivergenceConfig& cfg = {});

/// sum_x p(x) ln(p(x) / max(q(x), epsilon)). Terms with p(x) = 0 contribute 0.
/// Throws DimensionError on length mismatch, ValidationError on negative or
/// non-finite entries.
double kl_divergence(std::span<const float> p, std::span<const float> q,
                     const DivergenceConfig& cfg = {});
double kl_divergence(std::span<const double> p, std::span<const double> q,
                     const DivergenceConfig& cfg = {});

/// ln T - H(p), clamped to [0, ln T]. Throws EmptyRowError for T = 0.
double kl_to_uniform(std::span<const float> p, const DivergenceConfig& cfg = {});
double kl_to_uniform(std::span<const double> p, const DivergenceConfig& cfg = {});

/// KL values of one example indexed [row][layer][head], layer-major per row.
class DivergenceTensor {
 public:
  DivergenceTensor() = default;
  DivergenceTensor(std::size_t layers, std::size_t heads, std::string example_id = {});

  /// `values` holds one entry per (layer, head) in layer-major order.
  void append_row(RowKind kind, std::size_t context_length, std::span<const double> values);

  std::size_t rows() const noexcept { return kinds_.size(); }
  std::size_t layers() const noexcept { return layers_; }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t heads_per_row() const noexcept { return layers_ * heads_; }

  double at(std::size_t row, std::size_t layer, std::size_t head) const;
  std::span<const double> row(std::size_t r) const;
  RowKind kind(std::size_t r) const { return kinds_.at(r); }
  std::size_t context_length(std::size_t r) const { return context_.at(r); }
  std::size_t count(RowKind kind) const noexcept;

  const std::string& example_id() const noexcept { return example_id_; }

 private:
  std::size_t layers_ = 0;
  std::size_t heads_ = 0;
  std::string example_id_;
  std::vector<double> values_;
  std::vector<RowKind> kinds_;
  std::vector<std::size_t> context_;
};

struct FeatureVector {
  std::vector<double> entries;  // index = layer * H + head
  Scope scope = Scope::answer;
  Pooling pooling = Pooling::mean;
};

/// One KL value per (row, layer, head). Prefill rows come first (context
/// length i + 1 for prompt position i), then generated rows (context length
/// prompt_len + t). Throws ValidationError naming (row, layer, head) when a
/// row fails the attention-row checks.
DivergenceTensor compute_divergence_tensor(const DumpExample& example,
                                           const DivergenceConfig& cfg = {},
                                           double sum_tolerance = kRowSumTolerance);

/// Mean or max of the tensor over the rows selected by `scope`.
/// Throws EmptyScopeError when the scope selects no rows.
FeatureVector pool_features(const DivergenceTensor& tensor, Scope scope, Pooling pooling);

}  // namespace attndiv
