// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "attndiv/analysis.hpp"
#include "attndiv/cross_validation.hpp"
#include "attndiv/divergence.hpp"
#include "attndiv/dump.hpp"
#include "attndiv/error.hpp"
#include "attndiv/features_io.hpp"
#include "attndiv/parallel.hpp"
#include "attndiv/report.hpp"
#include "attndiv/sanity.hpp"

namespace attndiv::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

template <typename T>
void take(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

void take_path(const json& j, const char* key, fs::path& dst) {
  std::string s;
  take(j, key, s);
  if (j.contains(key)) dst = s;
}

void require_path(const fs::path& p, const char* flag) {
  if (p.empty()) throw ConfigError(std::string(flag) + " is required");
}

DivergenceConfig divergence_config(const RunConfig& cfg) {
  DivergenceConfig d{cfg.epsilon};
  d.validate();
  return d;
}

CvConfig cv_config(const RunConfig& cfg) {
  CvConfig cv;
  cv.probe.lambda = cfg.lambda;
  cv.probe.validate();
  cv.folds = cfg.folds;
  cv.seeds = cfg.seeds;
  cv.jobs = cfg.jobs;
  return cv;
}

int required_label(const DumpMetadata& m) {
  if (!m.label) throw MetadataError("example '" + m.example_id + "' has no label");
  return *m.label;
}

struct LoadedFeatures {
  std::vector<FeatureRecord> records;
  Matrix X;
  std::vector<int> y;
};

LoadedFeatures load_features(const RunConfig& cfg) {
  require_path(cfg.features, "--features");
  LoadedFeatures f;
  f.records = read_features(cfg.features);
  if (f.records.empty()) throw SchemaError("feature file '" + cfg.features.string() + "' holds no records");
  f.X = feature_matrix(f.records);
  f.y = labels_of(f.records);
  spdlog::info("loaded {} feature records of length {}", f.records.size(), f.X.cols());
  return f;
}

HeadGrid grid_for(const RunConfig& cfg, std::size_t feature_len, bool required) {
  if (cfg.layers == 0) {
    if (required) throw ConfigError("--layers is required for this mode");
    return {1, feature_len};
  }
  return HeadGrid::from_layers(feature_len, cfg.layers);
}

ProbeModel model_for(const RunConfig& cfg, const LoadedFeatures& f) {
  if (!cfg.model.empty()) {
    auto m = ProbeModel::load(cfg.model);
    if (m.feature_len() != static_cast<std::size_t>(f.X.cols())) {
      throw DimensionError("model expects " + std::to_string(m.feature_len()) + " features, file has " +
                           std::to_string(f.X.cols()));
    }
    return m;
  }
  TrainConfig tc;
  tc.lambda = cfg.lambda;
  return train(f.X, f.y, tc);
}

/// Divergence tensors of every example in the dump, computed in parallel.
struct LoadedDump {
  std::vector<DumpMetadata> meta;
  std::vector<DivergenceTensor> tensors;
};

LoadedDump load_tensors(const RunConfig& cfg) {
  require_path(cfg.dump, "--dump");
  const auto dcfg = divergence_config(cfg);
  auto examples = read_dump(cfg.dump, {.validate_rows = false});
  LoadedDump d;
  d.tensors.resize(examples.size());
  parallel_for(examples.size(), cfg.jobs,
               [&](std::size_t i) { d.tensors[i] = compute_divergence_tensor(examples[i], dcfg); });
  for (auto& ex : examples) d.meta.push_back(std::move(ex.meta));
  spdlog::info("computed divergence for {} examples", d.tensors.size());
  return d;
}

std::vector<FeatureRecord> pooled_records(const LoadedDump& d, const RunConfig& cfg) {
  const Scope scope = parse_scope(cfg.scope);
  const Pooling pooling = parse_pooling(cfg.pooling);
  std::vector<FeatureRecord> records(d.tensors.size());
  for (std::size_t i = 0; i < d.tensors.size(); ++i) {
    auto fv = pool_features(d.tensors[i], scope, pooling);
    records[i] = {d.meta[i].example_id, required_label(d.meta[i]), scope, pooling, std::move(fv.entries)};
  }
  return records;
}

std::vector<double> rows_of_kind(const DivergenceTensor& t, std::span<const double> scalars, Scope scope) {
  std::vector<double> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const bool prompt = t.kind(r) == RowKind::prompt;
    if (scope == Scope::full || (scope == Scope::prompt) == prompt) out.push_back(scalars[r]);
  }
  if (out.empty()) throw EmptyScopeError("example '" + t.example_id() + "' has no rows in scope " + std::string(to_string(scope)));
  return out;
}

Table metric_table(const MetricReport& r) {
  Table t{{"metric", "mean", "std"}, {}};
  t.add_row({"auroc", format_number(r.auroc.mean), format_number(r.auroc.std)});
  t.add_row({"accuracy", format_number(r.accuracy.mean), format_number(r.accuracy.std)});
  t.add_row({"ece", format_number(r.ece.mean), format_number(r.ece.std)});
  return t;
}

Table cell_table(const MetricReport& r) {
  Table t{{"seed", "fold", "n_train", "n_valid", "auroc", "accuracy", "ece", "iterations"}, {}};
  for (const auto& c : r.cells) {
    t.add_row({std::to_string(c.seed), std::to_string(c.fold), std::to_string(c.n_train), std::to_string(c.n_valid),
               format_number(c.auroc, 6), format_number(c.accuracy, 6), format_number(c.ece, 6),
               std::to_string(c.iterations)});
  }
  return t;
}

void write_report(const fs::path& dir, const MetricReport& r) {
  write_json(dir / "report.json", to_json(r));
  write_file(dir / "cells.csv", to_csv(cell_table(r)));
  write_file(dir / "report.txt", to_text(metric_table(r)));
}

Table ranking_table(const HeadRanking& ranking) {
  Table t{{"rank", "layer", "head", "weight"}, {}};
  for (std::size_t i = 0; i < ranking.selected; ++i) {
    const auto& rh = ranking.order[i];
    t.add_row({std::to_string(i + 1), std::to_string(rh.head.layer), std::to_string(rh.head.head),
               format_number(rh.weight, 6)});
  }
  return t;
}

void write_run_config(const RunConfig& cfg, const char* command) {
  json j = cfg.to_json();
  j["command"] = command;
  write_json(cfg.out / "run_config.json", j);
}

// -- analyze modes -----------------------------------------------------------

void analyze_delta_map(const RunConfig& cfg) {
  const auto f = load_features(cfg);
  const auto grid = grid_for(cfg, static_cast<std::size_t>(f.X.cols()), true);
  const auto delta = delta_divergence_map(f.X, f.y, grid);

  json rows = json::array();
  Table csv{{"layer", "head", "delta"}, {}};
  for (std::size_t l = 0; l < grid.layers; ++l) {
    std::vector<double> row(delta.begin() + static_cast<long>(l * grid.heads),
                            delta.begin() + static_cast<long>((l + 1) * grid.heads));
    for (std::size_t h = 0; h < grid.heads; ++h)
      csv.add_row({std::to_string(l), std::to_string(h), format_number(row[h], 6)});
    rows.push_back(row);
  }
  write_json(cfg.out / "delta_map.json", {{"layers", grid.layers}, {"heads", grid.heads}, {"delta", rows}});
  write_file(cfg.out / "delta_map.csv", to_csv(csv));
}

void analyze_rank(const RunConfig& cfg) {
  const auto f = load_features(cfg);
  const auto grid = grid_for(cfg, static_cast<std::size_t>(f.X.cols()), false);
  const auto ranking = rank_heads(model_for(cfg, f), grid);
  write_json(cfg.out / "heads.json", to_json(ranking));
  write_file(cfg.out / "heads.txt", to_text(ranking_table(ranking)));
}

void analyze_ecdf(const RunConfig& cfg) {
  const auto d = load_tensors(cfg);
  const Scope scope = parse_scope(cfg.scope);
  std::vector<std::vector<double>> per_example;
  for (const auto& t : d.tensors) per_example.push_back(rows_of_kind(t, token_divergence(t), scope));

  json curves = json::array();
  Table csv{{"percentile", "threshold", "correct", "incorrect", "difference", "lower", "upper"}, {}};
  for (double p : cfg.percentiles) {
    std::vector<double> correct, incorrect;
    for (std::size_t i = 0; i < per_example.size(); ++i)
      (required_label(d.meta[i]) == 1 ? correct : incorrect).push_back(percentile(per_example[i], p));
    const auto grid = threshold_grid(correct, incorrect, cfg.thresholds);
    const auto curve = survival_diff_ci(correct, incorrect, grid, cfg.resamples, cfg.level, cfg.seed, cfg.jobs);
    json j = to_json(curve);
    j["percentile"] = p;
    j["n_correct"] = correct.size();
    j["n_incorrect"] = incorrect.size();
    curves.push_back(j);
    for (std::size_t t = 0; t < grid.size(); ++t) {
      csv.add_row({format_number(p, 1), format_number(grid[t], 6), format_number(curve.correct[t], 6),
                   format_number(curve.incorrect[t], 6), format_number(curve.difference[t], 6),
                   format_number(curve.lower[t], 6), format_number(curve.upper[t], 6)});
    }
  }
  write_json(cfg.out / "ecdf.json", {{"scope", cfg.scope}, {"curves", curves}});
  write_file(cfg.out / "ecdf.csv", to_csv(csv));
}

void analyze_words(const RunConfig& cfg) {
  const auto d = load_tensors(cfg);
  const auto method = parse_word_aggregation(cfg.aggregation);
  std::vector<double> scalars;
  std::vector<WordClass> classes;
  for (std::size_t i = 0; i < d.tensors.size(); ++i) {
    const auto& m = d.meta[i];
    if (!m.word_ids || !m.word_classes) throw AnnotationError("example '" + m.example_id + "' has no word annotation");
    const auto tokens = rows_of_kind(d.tensors[i], token_divergence(d.tensors[i]), Scope::answer);
    const auto words = word_aggregate(tokens, *m.word_ids, method);
    const auto cls = classify_words(words, *m.word_classes);
    for (const auto& w : words) scalars.push_back(w.value);
    classes.insert(classes.end(), cls.begin(), cls.end());
  }
  const auto tail = tail_composition(scalars, classes, cfg.tail_percentile);
  json j = to_json(tail);
  j["aggregation"] = cfg.aggregation;
  write_json(cfg.out / "words.json", j);

  Table t{{"class", "tail_count", "tail_share", "mean_divergence"}, {}};
  for (std::size_t c = 0; c < kWordClassCount; ++c) {
    t.add_row({std::string(to_string(static_cast<WordClass>(c))), std::to_string(tail.counts[c]),
               format_number(tail.proportions[c]), format_number(tail.class_mean[c])});
  }
  write_file(cfg.out / "words.csv", to_csv(t));
  write_file(cfg.out / "words.txt", to_text(t));
}

std::vector<HeadSelection> load_selections(const RunConfig& cfg) {
  require_path(cfg.selections, "--selections");
  return selections_from_json(read_json(cfg.selections));
}

std::string head_label(const Head& h) { return std::to_string(h.layer) + ":" + std::to_string(h.head); }

std::string joined(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) s += (s.empty() ? "" : ";") + p;
  return s;
}

void analyze_overlap(const RunConfig& cfg) {
  const auto sel = load_selections(cfg);
  const auto table = head_overlap(sel);
  write_json(cfg.out / "overlap.json", to_json(table));
  Table t{{"scope", "head", "groups", "total"}, {}};
  for (const auto& [model, rows] : table.within_model)
    for (const auto& e : rows) t.add_row({model, head_label(e.head), joined(e.groups), std::to_string(e.total)});
  for (const auto& e : table.cross_model) t.add_row({"cross-model", head_label(e.head), joined(e.groups), std::to_string(e.total)});
  write_file(cfg.out / "overlap.txt", to_text(t));
}

void analyze_regions(const RunConfig& cfg) {
  const auto sel = load_selections(cfg);
  std::map<std::string, std::vector<HeadSelection>> by_model;
  for (const auto& s : sel) by_model[s.model].push_back(s);
  json out = json::object();
  Table t{{"model", "early", "middle", "late", "heads"}, {}};
  for (const auto& [model, group] : by_model) {
    const auto rd = region_distribution(group, group.front().grid.layers);
    out[model] = to_json(rd);
    t.add_row({model, format_number(rd.percent[0], 1), format_number(rd.percent[1], 1), format_number(rd.percent[2], 1),
               std::to_string(rd.total)});
  }
  write_json(cfg.out / "regions.json", out);
  write_file(cfg.out / "regions.txt", to_text(t));
}

}  // namespace

void RunConfig::normalize() {
  std::vector<std::uint64_t> unique;
  for (auto s : seeds)
    if (std::find(unique.begin(), unique.end(), s) == unique.end()) unique.push_back(s);
  seeds = std::move(unique);
  if (jobs == 0) jobs = default_jobs();
  // reject bad enum values before any input is read
  parse_scope(scope);
  parse_pooling(pooling);
  parse_word_aggregation(aggregation);
}

json RunConfig::to_json() const {
  return {{"dump", dump.string()},
          {"features", features.string()},
          {"model", model.string()},
          {"selections", selections.string()},
          {"out", out.string()},
          {"scope", scope},
          {"pooling", pooling},
          {"epsilon", epsilon},
          {"lambda", lambda},
          {"folds", folds},
          {"seeds", seeds},
          {"valid_fraction", valid_fraction},
          {"mode", mode},
          {"k", k},
          {"layers", layers},
          {"percentiles", percentiles},
          {"tail_percentile", tail_percentile},
          {"aggregation", aggregation},
          {"thresholds", thresholds},
          {"resamples", resamples},
          {"level", level},
          {"seed", seed},
          {"permutations", permutations},
          {"synth", synth.to_json()}};
}

void RunConfig::merge(const json& j) {
  static const std::set<std::string> known = {
      "dump", "features", "model", "selections", "out", "scope", "pooling", "epsilon", "lambda", "folds",
      "seeds", "jobs", "valid_fraction", "mode", "k", "layers", "percentiles", "tail_percentile", "aggregation",
      "thresholds", "resamples", "level", "seed", "permutations", "synth", "command"};
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");

  take_path(j, "dump", dump);
  take_path(j, "features", features);
  take_path(j, "model", model);
  take_path(j, "selections", selections);
  take_path(j, "out", out);
  take(j, "scope", scope);
  take(j, "pooling", pooling);
  take(j, "epsilon", epsilon);
  take(j, "lambda", lambda);
  take(j, "folds", folds);
  take(j, "seeds", seeds);
  take(j, "jobs", jobs);
  take(j, "valid_fraction", valid_fraction);
  take(j, "mode", mode);
  take(j, "k", k);
  take(j, "layers", layers);
  take(j, "percentiles", percentiles);
  take(j, "tail_percentile", tail_percentile);
  take(j, "aggregation", aggregation);
  take(j, "thresholds", thresholds);
  take(j, "resamples", resamples);
  take(j, "level", level);
  take(j, "seed", seed);
  take(j, "permutations", permutations);
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    if (!s.is_object()) throw ConfigError("config key 'synth' must be an object");
    take(s, "n_examples", synth.n_examples);
    take(s, "layers", synth.layers);
    take(s, "heads", synth.heads);
    take(s, "prompt_len", synth.prompt_len);
    take(s, "gen_len", synth.gen_len);
    take(s, "alpha_correct", synth.alpha_correct);
    take(s, "alpha_incorrect", synth.alpha_incorrect);
    take(s, "base_rate", synth.base_rate);
    take(s, "seed", synth.seed);
    take(s, "with_prefill", synth.with_prefill);
    take(s, "with_words", synth.with_words);
  }
}

void cmd_synth(const RunConfig& cfg) {
  cfg.synth.validate();
  const auto examples = generate_synthetic(cfg.synth);
  write_dump(examples, cfg.out / "dump.adv");
  write_json(cfg.out / "synth.json", cfg.synth.to_json());
  spdlog::info("wrote {} synthetic examples", examples.size());
}

void cmd_extract_features(const RunConfig& cfg) {
  const auto records = pooled_records(load_tensors(cfg), cfg);
  write_features(records, cfg.out / "features.jsonl");
  write_run_config(cfg, "extract-features");
}

void cmd_train(const RunConfig& cfg) {
  const auto f = load_features(cfg);
  const auto cv = cv_config(cfg);
  const std::string mode = cfg.mode.empty() ? "cv" : cfg.mode;
  MetricReport report;
  if (mode == "cv") {
    report = cross_validate(f.X, f.y, cv);
  } else if (mode == "holdout") {
    report = holdout_validate(f.X, f.y, cv, cfg.valid_fraction);
  } else {
    throw ConfigError("train --mode must be cv or holdout, got '" + mode + "'");
  }
  write_report(cfg.out, report);

  const auto model = train(f.X, f.y, cv.probe);
  model.save(cfg.out / "model.json");
  if (cfg.layers > 0) {
    const auto ranking = rank_heads(model, grid_for(cfg, model.feature_len(), true));
    write_json(cfg.out / "heads.json", to_json(ranking));
  }
  write_run_config(cfg, "train");
  spdlog::info("auroc {:.4f} +- {:.4f}", report.auroc.mean, report.auroc.std);
}

void cmd_ablate(const RunConfig& cfg) {
  const auto f = load_features(cfg);
  const auto cv = cv_config(cfg);
  const auto d = static_cast<std::size_t>(f.X.cols());
  const std::string mode = cfg.mode.empty() ? "heads-topk" : cfg.mode;

  MetricReport report;
  json removed = json::array();
  if (mode == "heads-topk") {
    const auto ranking = rank_heads(model_for(cfg, f), grid_for(cfg, d, false));
    report = ablate_heads(f.X, f.y, ranking, cfg.k, cv);
    for (std::size_t i = 0; i < cfg.k; ++i) {
      const auto& rh = ranking.order[i];
      removed.push_back({{"layer", rh.head.layer}, {"head", rh.head.head}, {"weight", rh.weight}});
    }
  } else if (mode.starts_with("layers-")) {
    const auto group = parse_layer_group(mode.substr(7));
    const auto grid = grid_for(cfg, d, true);
    report = ablate_layer_group(f.X, f.y, grid, group, cv);
    const auto range = layer_group_range(group, grid.layers);
    for (std::size_t l = range.begin; l < range.end; ++l) removed.push_back({{"layer", l}});
  } else {
    throw ConfigError("ablate --mode must be heads-topk or layers-{early,middle,late}, got '" + mode + "'");
  }
  write_report(cfg.out, report);
  write_json(cfg.out / "ablation.json", {{"mode", mode}, {"k", cfg.k}, {"removed", removed}});
  write_run_config(cfg, "ablate");
}

void cmd_analyze(const RunConfig& cfg) {
  if (cfg.mode == "delta-map") return analyze_delta_map(cfg);
  if (cfg.mode == "rank") return analyze_rank(cfg);
  if (cfg.mode == "ecdf") return analyze_ecdf(cfg);
  if (cfg.mode == "words") return analyze_words(cfg);
  if (cfg.mode == "overlap") return analyze_overlap(cfg);
  if (cfg.mode == "regions") return analyze_regions(cfg);
  throw ConfigError("analyze --mode must be one of delta-map, rank, ecdf, words, overlap, regions; got '" +
                    cfg.mode + "'");
}

void cmd_sanity(const RunConfig& cfg) {
  const auto d = load_tensors(cfg);
  const auto records = pooled_records(d, cfg);
  SanityConfig sc;
  sc.cv = cv_config(cfg);
  sc.permutations = cfg.permutations;
  sc.seed = cfg.seed;
  const auto rows = run_sanity_suite(d.meta, feature_matrix(records), labels_of(records), sc);

  write_json(cfg.out / "sanity.json", to_json(rows));
  Table t{{"feature", "auroc", "std"}, {}};
  for (const auto& r : rows) t.add_row({r.name, format_number(r.auroc), format_number(r.std)});
  write_file(cfg.out / "sanity.csv", to_csv(t));
  write_file(cfg.out / "sanity.txt", to_text(t));
  write_run_config(cfg, "sanity");
}

}  // namespace attndiv::cli
