// SPDX-License-Identifier: Apache-2.0
#include "attndiv/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "attndiv/error.hpp"
#include "attndiv/parallel.hpp"
#include "attndiv/random.hpp"

namespace attndiv {
namespace {

constexpr std::uint64_t kResampleStride = 0x9E3779B97F4A7C15ull;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void survival_sorted(std::span<const double> sorted, std::span<const double> thresholds, std::span<double> out) {
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const auto first_ge = std::lower_bound(sorted.begin(), sorted.end(), thresholds[i]);
    out[i] = static_cast<double>(sorted.end() - first_ge) / n;
  }
}

void require_group(std::span<const double> values, const char* name) {
  if (values.empty()) throw ValidationError(std::string(name) + " group is empty");
  for (double v : values)
    if (std::isnan(v)) throw ValidationError(std::string(name) + " group contains NaN");
}

}  // namespace

HeadGrid HeadGrid::from_layers(std::size_t feature_len, std::size_t layers) {
  if (layers == 0 || feature_len % layers != 0) {
    throw DimensionError("feature length " + std::to_string(feature_len) + " is not a multiple of " +
                         std::to_string(layers) + " layers");
  }
  return {layers, feature_len / layers};
}

std::vector<double> delta_divergence_map(const Matrix& features, std::span<const int> labels, HeadGrid grid) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw DimensionError("feature rows and labels differ in count");
  }
  if (static_cast<std::size_t>(features.cols()) != grid.size()) {
    throw DimensionError("feature length does not match the layer x head grid");
  }
  const auto d = static_cast<std::size_t>(features.cols());
  std::vector<double> sum_pos(d, 0.0), sum_neg(d, 0.0);
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
    auto& sums = labels[i] == 1 ? sum_pos : sum_neg;
    (labels[i] == 1 ? n_pos : n_neg)++;
    for (std::size_t j = 0; j < d; ++j) sums[j] += features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  if (n_pos == 0 || n_neg == 0) throw DegenerateLabelError("class-difference map needs both classes");
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j)
    out[j] = sum_pos[j] / static_cast<double>(n_pos) - sum_neg[j] / static_cast<double>(n_neg);
  return out;
}

HeadRanking rank_heads(const ProbeModel& model, HeadGrid grid) {
  if (model.feature_len() != grid.size()) throw DimensionError("model length does not match the layer x head grid");
  HeadRanking ranking;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double w = model.weights[static_cast<Eigen::Index>(j)];
    ranking.order.push_back({Head{j / grid.heads, j % grid.heads}, j, w});
    if (w != 0.0) ++ranking.selected;
  }
  std::stable_sort(ranking.order.begin(), ranking.order.end(), [](const RankedHead& a, const RankedHead& b) {
    const double ma = std::abs(a.weight), mb = std::abs(b.weight);
    if (ma != mb) return ma > mb;
    return a.head < b.head;
  });
  return ranking;
}

MetricReport ablate_features(const Matrix& X, std::span<const int> y, std::span<const std::size_t> columns,
                             const CvConfig& cfg) {
  return cross_validate(drop_columns(X, columns), y, cfg);
}

MetricReport ablate_heads(const Matrix& X, std::span<const int> y, const HeadRanking& ranking, std::size_t k,
                          const CvConfig& cfg) {
  const auto d = static_cast<std::size_t>(X.cols());
  if (ranking.order.size() != d) throw DimensionError("ranking does not cover every feature column");
  if (k >= d) {
    throw ConfigError("cannot remove top-" + std::to_string(k) + " heads from " + std::to_string(d) + " features");
  }
  std::vector<std::size_t> columns;
  for (std::size_t i = 0; i < k; ++i) columns.push_back(ranking.order[i].column);
  return ablate_features(X, y, columns, cfg);
}

std::string_view to_string(LayerGroup group) noexcept {
  switch (group) {
    case LayerGroup::early: return "early";
    case LayerGroup::middle: return "middle";
    case LayerGroup::late: return "late";
  }
  return "?";
}

LayerGroup parse_layer_group(std::string_view text) {
  if (text == "early") return LayerGroup::early;
  if (text == "middle") return LayerGroup::middle;
  if (text == "late") return LayerGroup::late;
  throw ConfigError("unknown layer group '" + std::string(text) + "'");
}

LayerRange layer_group_range(LayerGroup group, std::size_t layers) {
  if (layers < 3) throw ConfigError("layer groups need at least 3 layers");
  const std::size_t first = ceil_div(layers, 3);
  const std::size_t second = ceil_div(2 * layers, 3);
  switch (group) {
    case LayerGroup::early: return {0, first};
    case LayerGroup::middle: return {first, second};
    case LayerGroup::late: return {second, layers};
  }
  return {};
}

LayerGroup layer_group_of(std::size_t layer, std::size_t layers) {
  if (layer >= layers) throw DimensionError("layer index out of range");
  for (auto g : {LayerGroup::early, LayerGroup::middle, LayerGroup::late}) {
    const auto r = layer_group_range(g, layers);
    if (layer >= r.begin && layer < r.end) return g;
  }
  return LayerGroup::late;
}

MetricReport ablate_layer_group(const Matrix& X, std::span<const int> y, HeadGrid grid, LayerGroup group,
                                const CvConfig& cfg) {
  if (static_cast<std::size_t>(X.cols()) != grid.size()) {
    throw DimensionError("feature length does not match the layer x head grid");
  }
  const auto range = layer_group_range(group, grid.layers);
  std::vector<std::size_t> columns;
  for (std::size_t l = range.begin; l < range.end; ++l)
    for (std::size_t h = 0; h < grid.heads; ++h) columns.push_back(l * grid.heads + h);
  return ablate_features(X, y, columns, cfg);
}

std::vector<double> token_divergence(const DivergenceTensor& tensor) {
  std::vector<double> out;
  out.reserve(tensor.rows());
  for (std::size_t r = 0; r < tensor.rows(); ++r) {
    const auto row = tensor.row(r);
    out.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size()));
  }
  return out;
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile rank must lie in [0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = static_cast<double>(sorted.size() - 1) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> survival(std::span<const double> values, std::span<const double> thresholds) {
  require_group(values, "survival");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out(thresholds.size());
  survival_sorted(sorted, thresholds, out);
  return out;
}

std::vector<double> threshold_grid(std::span<const double> a, std::span<const double> b, std::size_t n_points) {
  if (n_points < 2) throw ConfigError("threshold grid needs at least 2 points");
  require_group(a, "first");
  require_group(b, "second");
  const double lo = std::min(*std::min_element(a.begin(), a.end()), *std::min_element(b.begin(), b.end()));
  const double hi = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
  std::vector<double> out(n_points);
  for (std::size_t i = 0; i < n_points; ++i)
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_points - 1);
  return out;
}

SurvivalCurve survival_curve(std::span<const double> correct, std::span<const double> incorrect,
                             std::span<const double> thresholds) {
  require_group(correct, "correct");
  require_group(incorrect, "incorrect");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw ValidationError("thresholds must be ascending");
  SurvivalCurve c;
  c.thresholds.assign(thresholds.begin(), thresholds.end());
  c.correct = survival(correct, thresholds);
  c.incorrect = survival(incorrect, thresholds);
  c.difference.resize(thresholds.size());
  for (std::size_t i = 0; i < thresholds.size(); ++i) c.difference[i] = c.correct[i] - c.incorrect[i];
  return c;
}

SurvivalCurve survival_diff_ci(std::span<const double> correct, std::span<const double> incorrect,
                               std::span<const double> thresholds, std::size_t resamples, double level,
                               std::uint64_t seed, std::size_t jobs) {
  if (resamples < 1) throw ConfigError("bootstrap needs at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  SurvivalCurve curve = survival_curve(correct, incorrect, thresholds);
  const std::size_t n_t = thresholds.size();

  // diffs[t * resamples + b]
  std::vector<double> diffs(n_t * resamples);
  parallel_for(resamples, jobs, [&](std::size_t b) {
    Rng rng(seed ^ ((b + 1) * kResampleStride));
    auto resample = [&rng](std::span<const double> src) {
      std::vector<double> out(src.size());
      for (double& v : out) v = src[static_cast<std::size_t>(rng.below(src.size()))];
      std::sort(out.begin(), out.end());
      return out;
    };
    const auto rc = resample(correct);
    const auto ri = resample(incorrect);
    std::vector<double> sc(n_t), si(n_t);
    survival_sorted(rc, thresholds, sc);
    survival_sorted(ri, thresholds, si);
    for (std::size_t t = 0; t < n_t; ++t) diffs[t * resamples + b] = sc[t] - si[t];
  });

  const double lo_p = 50.0 * (1.0 - level);
  const double hi_p = 100.0 - lo_p;
  curve.lower.resize(n_t);
  curve.upper.resize(n_t);
  for (std::size_t t = 0; t < n_t; ++t) {
    const std::span<const double> col(diffs.data() + t * resamples, resamples);
    curve.lower[t] = std::min(percentile(col, lo_p), curve.difference[t]);
    curve.upper[t] = std::max(percentile(col, hi_p), curve.difference[t]);
  }
  curve.resamples = resamples;
  curve.level = level;
  return curve;
}

WordAggregation parse_word_aggregation(std::string_view text) {
  if (text == "mean") return WordAggregation::mean;
  if (text == "max") return WordAggregation::max;
  throw ConfigError("unknown word aggregation '" + std::string(text) + "'");
}

std::vector<WordScore> word_aggregate(std::span<const double> token_scalars, std::span<const std::int64_t> word_ids,
                                      WordAggregation method) {
  if (token_scalars.size() != word_ids.size()) {
    throw AnnotationError("word_ids cover " + std::to_string(word_ids.size()) + " tokens but there are " +
                          std::to_string(token_scalars.size()) + " generated rows");
  }
  std::vector<WordScore> out;
  std::size_t members = 0;
  for (std::size_t t = 0; t < token_scalars.size(); ++t) {
    const double v = token_scalars[t];
    if (!out.empty() && word_ids[t] < out.back().word_id) throw AnnotationError("word_ids must be nondecreasing");
    if (out.empty() || word_ids[t] != out.back().word_id) {
      if (!out.empty() && method == WordAggregation::mean) out.back().value /= static_cast<double>(members);
      out.push_back({word_ids[t], v});
      members = 1;
      continue;
    }
    out.back().value = method == WordAggregation::mean ? out.back().value + v : std::max(out.back().value, v);
    ++members;
  }
  if (!out.empty() && method == WordAggregation::mean) out.back().value /= static_cast<double>(members);
  return out;
}

std::vector<WordClass> classify_words(std::span<const WordScore> words, const std::map<std::int64_t, WordClass>& classes) {
  std::vector<WordClass> out;
  out.reserve(words.size());
  for (const auto& w : words) {
    const auto it = classes.find(w.word_id);
    if (it == classes.end()) throw AnnotationError("word id " + std::to_string(w.word_id) + " has no class");
    out.push_back(it->second);
  }
  return out;
}

TailComposition tail_composition(std::span<const double> word_scalars, std::span<const WordClass> classes, double p) {
  if (word_scalars.size() != classes.size()) throw AnnotationError("every word needs exactly one class");
  TailComposition tc;
  tc.percentile = p;
  tc.threshold = percentile(word_scalars, p);
  tc.n_words = word_scalars.size();
  std::array<double, kWordClassCount> sums{};
  std::array<std::size_t, kWordClassCount> totals{};
  for (std::size_t i = 0; i < word_scalars.size(); ++i) {
    const auto c = static_cast<std::size_t>(classes[i]);
    sums[c] += word_scalars[i];
    ++totals[c];
    if (word_scalars[i] >= tc.threshold) {
      ++tc.counts[c];
      ++tc.tail_size;
    }
  }
  for (std::size_t c = 0; c < kWordClassCount; ++c) {
    tc.proportions[c] = static_cast<double>(tc.counts[c]) / static_cast<double>(tc.tail_size);
    tc.class_mean[c] = totals[c] ? sums[c] / static_cast<double>(totals[c]) : 0.0;
  }
  return tc;
}

HeadSelection selection_from_models(std::span<const ProbeModel> models, HeadGrid grid, std::string model_name,
                                    std::string dataset) {
  HeadSelection sel{std::move(model_name), std::move(dataset), grid, {}};
  for (const auto& m : models) {
    const auto ranking = rank_heads(m, grid);
    for (const auto& rh : ranking.selected_heads()) ++sel.counts[rh.head];
  }
  return sel;
}

OverlapTable head_overlap(std::span<const HeadSelection> selections) {
  std::map<std::string, HeadGrid> grids;
  for (const auto& s : selections) {
    auto [it, inserted] = grids.emplace(s.model, s.grid);
    if (!inserted && (it->second.layers != s.grid.layers || it->second.heads != s.grid.heads)) {
      throw DimensionError("selections of model '" + s.model + "' disagree on the layer x head grid");
    }
    for (const auto& [head, count] : s.counts) {
      if (head.layer >= s.grid.layers || head.head >= s.grid.heads) {
        throw DimensionError("head (" + std::to_string(head.layer) + ", " + std::to_string(head.head) +
                             ") lies outside the grid of '" + s.model + "'");
      }
    }
  }

  OverlapTable table;
  // model -> head -> (datasets, total count)
  std::map<std::string, std::map<Head, OverlapEntry>> per_model;
  for (const auto& s : selections) {
    for (const auto& [head, count] : s.counts) {
      if (count <= 0) continue;
      auto& e = per_model[s.model][head];
      e.head = head;
      e.groups.push_back(s.dataset);
      e.total += count;
    }
  }
  std::map<Head, OverlapEntry> across;
  for (auto& [model, heads] : per_model) {
    auto& rows = table.within_model[model];
    for (auto& [head, entry] : heads) {
      std::sort(entry.groups.begin(), entry.groups.end());
      entry.groups.erase(std::unique(entry.groups.begin(), entry.groups.end()), entry.groups.end());
      if (entry.groups.size() >= 2) rows.push_back(entry);
      auto& x = across[head];
      x.head = head;
      x.groups.push_back(model);
      x.total += entry.total;
    }
  }
  for (auto& [head, entry] : across)
    if (entry.groups.size() >= 2) table.cross_model.push_back(entry);
  return table;
}

RegionDistribution region_distribution(std::span<const HeadSelection> selections, std::size_t layers) {
  RegionDistribution rd;
  for (const auto& s : selections) {
    if (s.grid.layers != layers) throw DimensionError("selection grid does not have " + std::to_string(layers) + " layers");
    for (const auto& [head, count] : s.counts) {
      if (count <= 0) continue;
      ++rd.counts[static_cast<std::size_t>(layer_group_of(head.layer, layers))];
      ++rd.total;
    }
  }
  for (std::size_t g = 0; g < 3; ++g)
    rd.percent[g] = rd.total ? 100.0 * static_cast<double>(rd.counts[g]) / static_cast<double>(rd.total) : 0.0;
  return rd;
}

nlohmann::json to_json(const SurvivalCurve& c) {
  nlohmann::json j = {{"thresholds", c.thresholds},
                      {"correct", c.correct},
                      {"incorrect", c.incorrect},
                      {"difference", c.difference}};
  if (!c.lower.empty()) {
    j["lower"] = c.lower;
    j["upper"] = c.upper;
    j["resamples"] = c.resamples;
    j["level"] = c.level;
  }
  return j;
}

nlohmann::json to_json(const TailComposition& t) {
  nlohmann::json classes = nlohmann::json::object();
  for (std::size_t c = 0; c < kWordClassCount; ++c) {
    classes[std::string(to_string(static_cast<WordClass>(c)))] = {
        {"count", t.counts[c]}, {"proportion", t.proportions[c]}, {"mean_divergence", t.class_mean[c]}};
  }
  return {{"percentile", t.percentile},
          {"threshold", t.threshold},
          {"n_words", t.n_words},
          {"tail_size", t.tail_size},
          {"classes", classes}};
}

nlohmann::json to_json(const OverlapTable& table) {
  auto entry = [](const OverlapEntry& e) {
    return nlohmann::json{{"layer", e.head.layer}, {"head", e.head.head}, {"groups", e.groups}, {"total", e.total}};
  };
  nlohmann::json within = nlohmann::json::object();
  for (const auto& [model, rows] : table.within_model) {
    within[model] = nlohmann::json::array();
    for (const auto& e : rows) within[model].push_back(entry(e));
  }
  nlohmann::json cross = nlohmann::json::array();
  for (const auto& e : table.cross_model) cross.push_back(entry(e));
  return {{"within_model", within}, {"cross_model", cross}};
}

nlohmann::json to_json(const RegionDistribution& r) {
  return {{"early", r.percent[0]},
          {"middle", r.percent[1]},
          {"late", r.percent[2]},
          {"counts", {{"early", r.counts[0]}, {"middle", r.counts[1]}, {"late", r.counts[2]}}},
          {"total", r.total}};
}

nlohmann::json to_json(const HeadRanking& ranking) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& rh : ranking.order) {
    heads.push_back({{"layer", rh.head.layer}, {"head", rh.head.head}, {"column", rh.column}, {"weight", rh.weight}});
  }
  return {{"selected", ranking.selected}, {"order", heads}};
}

std::vector<HeadSelection> selections_from_json(const nlohmann::json& j) {
  std::vector<HeadSelection> out;
  try {
    for (const auto& item : j.at("selections")) {
      HeadSelection s;
      s.model = item.at("model").get<std::string>();
      s.dataset = item.at("dataset").get<std::string>();
      s.grid = {item.at("layers").get<std::size_t>(), item.at("heads").get<std::size_t>()};
      for (const auto& h : item.at("heads_selected")) {
        const Head head{h.at("layer").get<std::size_t>(), h.at("head").get<std::size_t>()};
        s.counts[head] += h.value("count", 1);
      }
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed selections document: ") + e.what());
  }
  return out;
}

}  // namespace attndiv
