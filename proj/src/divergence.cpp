// SPDX-License-Identifier: Apache-2.0
#include "attndiv/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "attndiv/dump.hpp"
#include "attndiv/error.hpp"

namespace attndiv {
namespace {

// Rows longer than this are summed pairwise.
constexpr std::size_t kPairwiseThreshold = 4096;
constexpr std::size_t kPairwiseBlock = 256;

template <typename T, typename Term>
double pairwise_sum(std::span<const T> xs, Term&& term) {
  if (xs.size() <= kPairwiseBlock) {
    double acc = 0.0;
    for (T x : xs) acc += term(static_cast<double>(x));
    return acc;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half), term) + pairwise_sum(xs.subspan(half), term);
}

template <typename T, typename Term>
double sum_terms(std::span<const T> xs, Term&& term) {
  if (xs.size() > kPairwiseThreshold) return pairwise_sum(xs, term);
  double acc = 0.0;
  for (T x : xs) acc += term(static_cast<double>(x));
  return acc;
}

template <typename T>
void require_probabilities(std::span<const T> p, std::string_view name) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = static_cast<double>(p[i]);
    if (!std::isfinite(v) || v < 0.0) {
      std::ostringstream os;
      os << name << "[" << i << "] = " << v << " is not a finite non-negative probability";
      throw ValidationError(os.str());
    }
  }
}

template <typename T>
std::optional<std::string> check_row_impl(std::span<const T> p, double tol) {
  if (p.empty()) return std::string("empty attention row");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = static_cast<double>(p[i]);
    if (!std::isfinite(v)) return "entry " + std::to_string(i) + " is not finite";
    if (v < 0.0) return "entry " + std::to_string(i) + " is negative";
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) {
    std::ostringstream os;
    os << "row sums to " << sum << ", outside 1 +/- " << tol;
    return os.str();
  }
  return std::nullopt;
}

template <typename T>
double entropy_impl(std::span<const T> p, const DivergenceConfig& cfg) {
  const double eps = cfg.epsilon;
  return -sum_terms(p, [eps](double v) { return v > 0.0 ? v * std::log(std::max(v, eps)) : 0.0; });
}

template <typename T>
double kl_impl(std::span<const T> p, std::span<const T> q, const DivergenceConfig& cfg) {
  if (p.size() != q.size()) {
    throw DimensionError("kl_divergence: length mismatch (" + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()) + ")");
  }
  require_probabilities(p, "p");
  require_probabilities(q, "q");
  const double eps = cfg.epsilon;
  double acc = 0.0;
  auto term = [eps](double pv, double qv) {
    if (pv <= 0.0) return 0.0;
    return pv * (std::log(std::max(pv, eps)) - std::log(std::max(qv, eps)));
  };
  if (p.size() > kPairwiseThreshold) {
    std::vector<double> terms(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
      terms[i] = term(static_cast<double>(p[i]), static_cast<double>(q[i]));
    return pairwise_sum(std::span<const double>(terms), [](double v) { return v; });
  }
  for (std::size_t i = 0; i < p.size(); ++i)
    acc += term(static_cast<double>(p[i]), static_cast<double>(q[i]));
  return acc;
}

template <typename T>
double kl_uniform_impl(std::span<const T> p, const DivergenceConfig& cfg) {
  if (p.empty()) throw EmptyRowError("kl_to_uniform: empty attention row");
  require_probabilities(p, "p");
  const double log_t = std::log(static_cast<double>(p.size()));
  const double kl = log_t - entropy_impl(p, cfg);
  return std::clamp(kl, 0.0, log_t);
}

}  // namespace

std::string_view to_string(Scope scope) noexcept {
  switch (scope) {
    case Scope::prompt: return "prompt";
    case Scope::answer: return "answer";
    case Scope::full: return "full";
  }
  return "?";
}

std::string_view to_string(Pooling pooling) noexcept {
  return pooling == Pooling::mean ? "mean" : "max";
}

std::string_view to_string(RowKind kind) noexcept {
  return kind == RowKind::prompt ? "prompt" : "generated";
}

Scope parse_scope(std::string_view text) {
  if (text == "prompt") return Scope::prompt;
  if (text == "answer") return Scope::answer;
  if (text == "full") return Scope::full;
  throw ConfigError("unknown scope '" + std::string(text) + "' (expected prompt, answer or full)");
}

Pooling parse_pooling(std::string_view text) {
  if (text == "mean") return Pooling::mean;
  if (text == "max") return Pooling::max;
  throw ConfigError("unknown pooling '" + std::string(text) + "' (expected mean or max)");
}

void DivergenceConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1e-6)) {
    std::ostringstream os;
    os << "epsilon must lie in (0, 1e-6], got " << epsilon;
    throw ConfigError(os.str());
  }
}

std::optional<std::string> check_attention_row(std::span<const float> p, double tol) {
  return check_row_impl(p, tol);
}
std::optional<std::string> check_attention_row(std::span<const double> p, double tol) {
  return check_row_impl(p, tol);
}

double entropy(std::span<const float> p, const DivergenceConfig& cfg) { return entropy_impl(p, cfg); }
double entropy(std::span<const double> p, const DivergenceConfig& cfg) { return entropy_impl(p, cfg); }

double kl_divergence(std::span<const float> p, std::span<const float> q, const DivergenceConfig& cfg) {
  return kl_impl(p, q, cfg);
}
double kl_divergence(std::span<const double> p, std::span<const double> q,
                     const DivergenceConfig& cfg) {
  return kl_impl(p, q, cfg);
}

double kl_to_uniform(std::span<const float> p, const DivergenceConfig& cfg) {
  return kl_uniform_impl(p, cfg);
}
double kl_to_uniform(std::span<const double> p, const DivergenceConfig& cfg) {
  return kl_uniform_impl(p, cfg);
}

DivergenceTensor::DivergenceTensor(std::size_t layers, std::size_t heads, std::string example_id)
    : layers_(layers), heads_(heads), example_id_(std::move(example_id)) {}

void DivergenceTensor::append_row(RowKind kind, std::size_t context_length,
                                  std::span<const double> values) {
  if (values.size() != heads_per_row()) {
    throw DimensionError("divergence row has " + std::to_string(values.size()) +
                         " values, expected " + std::to_string(heads_per_row()));
  }
  values_.insert(values_.end(), values.begin(), values.end());
  kinds_.push_back(kind);
  context_.push_back(context_length);
}

double DivergenceTensor::at(std::size_t r, std::size_t layer, std::size_t head) const {
  if (r >= rows() || layer >= layers_ || head >= heads_) throw DimensionError("tensor index out of range");
  return values_[r * heads_per_row() + layer * heads_ + head];
}

std::span<const double> DivergenceTensor::row(std::size_t r) const {
  if (r >= rows()) throw DimensionError("tensor row out of range");
  return std::span<const double>(values_).subspan(r * heads_per_row(), heads_per_row());
}

std::size_t DivergenceTensor::count(RowKind kind) const noexcept {
  return static_cast<std::size_t>(std::count(kinds_.begin(), kinds_.end(), kind));
}

DivergenceTensor compute_divergence_tensor(const DumpExample& example, const DivergenceConfig& cfg,
                                           double sum_tolerance) {
  cfg.validate();
  const auto& meta = example.meta;
  if (example.prefill.size() != DumpExample::prefill_value_count(meta) ||
      example.generated.size() != DumpExample::generated_value_count(meta)) {
    throw MalformedDumpError("example '" + meta.example_id +
                             "' is missing attention values for some (row, layer, head)");
  }
  const std::size_t layers = meta.num_layers;
  const std::size_t heads = meta.num_heads;
  DivergenceTensor tensor(layers, heads, meta.example_id);
  std::vector<double> values(layers * heads);
  for (std::size_t r = 0; r < example.row_count(); ++r) {
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t h = 0; h < heads; ++h) {
        const auto row = example.row(r, l, h);
        if (auto problem = check_attention_row(row, sum_tolerance)) {
          std::ostringstream os;
          os << "example '" << meta.example_id << "' row " << r << " layer " << l << " head " << h
             << ": " << *problem;
          throw ValidationError(os.str(), RowLocation{r, l, h});
        }
        values[l * heads + h] = kl_to_uniform(row, cfg);
      }
    }
    tensor.append_row(example.row_kind(r), example.context_length(r), values);
  }
  return tensor;
}

FeatureVector pool_features(const DivergenceTensor& tensor, Scope scope, Pooling pooling) {
  auto selected = [scope](RowKind kind) {
    switch (scope) {
      case Scope::prompt: return kind == RowKind::prompt;
      case Scope::answer: return kind == RowKind::generated;
      case Scope::full: return true;
    }
    return false;
  };

  const std::size_t width = tensor.heads_per_row();
  FeatureVector out;
  out.scope = scope;
  out.pooling = pooling;
  out.entries.assign(width, pooling == Pooling::mean ? 0.0 : -std::numeric_limits<double>::infinity());

  std::size_t n = 0;
  for (std::size_t r = 0; r < tensor.rows(); ++r) {
    if (!selected(tensor.kind(r))) continue;
    const auto row = tensor.row(r);
    for (std::size_t j = 0; j < width; ++j) {
      if (pooling == Pooling::mean)
        out.entries[j] += row[j];
      else
        out.entries[j] = std::max(out.entries[j], row[j]);
    }
    ++n;
  }
  if (n == 0) {
    throw EmptyScopeError("scope '" + std::string(to_string(scope)) + "' selects no rows in example '" +
                          tensor.example_id() + "'");
  }
  if (pooling == Pooling::mean)
    for (double& v : out.entries) v /= static_cast<double>(n);
  return out;
}

}  // namespace attndiv
