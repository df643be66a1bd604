// SPDX-License-Identifier: Apache-2.0
#include "attndiv/cross_validation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attndiv/error.hpp"
#include "attndiv/metrics.hpp"
#include "attndiv/parallel.hpp"
#include "attndiv/random.hpp"

namespace attndiv {
namespace {

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const int> labels) {
  std::vector<std::vector<std::size_t>> by_class(2);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  return by_class;
}

MetricCell evaluate_split(const Matrix& X, std::span<const int> y, std::span<const std::size_t> train_idx,
                          std::span<const std::size_t> valid_idx, const CvConfig& cfg) {
  std::vector<int> y_train, y_valid;
  y_train.reserve(train_idx.size());
  y_valid.reserve(valid_idx.size());
  for (auto i : train_idx) y_train.push_back(y[i]);
  for (auto i : valid_idx) y_valid.push_back(y[i]);

  const ProbeModel model = train(select_rows(X, train_idx), y_train, cfg.probe);
  const auto probs = predict_proba(model, select_rows(X, valid_idx));

  MetricCell cell;
  cell.n_train = train_idx.size();
  cell.n_valid = valid_idx.size();
  cell.auroc = auroc(probs, y_valid);
  cell.accuracy = accuracy(probs, y_valid, cfg.threshold);
  cell.ece = ece(probs, y_valid, cfg.ece_bins);
  cell.iterations = model.n_iterations_used;
  return cell;
}

}  // namespace

std::vector<std::size_t> FoldPlan::members(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(i);
  return out;
}

FoldPlan stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw StratificationError("k must be >= 2");
  auto by_class = indices_by_class(labels);
  for (std::size_t c = 0; c < 2; ++c) {
    if (by_class[c].size() < k) {
      throw StratificationError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                                " members, fewer than k = " + std::to_string(k));
    }
  }
  FoldPlan plan{k, seed, std::vector<std::size_t>(labels.size(), 0)};
  Rng rng(seed);
  std::size_t dealt = 0;
  for (auto& members : by_class) {
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t idx : members) plan.fold_of[idx] = dealt++ % k;
  }
  return plan;
}

HoldoutSplit stratified_holdout(std::span<const int> labels, double valid_fraction, std::uint64_t seed) {
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) throw ConfigError("valid_fraction must lie in (0, 1)");
  auto by_class = indices_by_class(labels);
  Rng rng(seed);
  HoldoutSplit split;
  for (std::size_t c = 0; c < 2; ++c) {
    auto& members = by_class[c];
    rng.shuffle(std::span<std::size_t>(members));
    const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(members.size())));
    if (n_valid < 1 || n_valid >= members.size()) {
      throw StratificationError("class " + std::to_string(c) + " is too small for a stratified holdout split");
    }
    split.valid.insert(split.valid.end(), members.begin(), members.begin() + static_cast<long>(n_valid));
    split.train.insert(split.train.end(), members.begin() + static_cast<long>(n_valid), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  return split;
}

std::vector<int> permute_labels(std::span<const int> labels, std::uint64_t seed) {
  std::vector<int> out(labels.begin(), labels.end());
  Rng rng(seed);
  rng.shuffle(std::span<int>(out));
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

MetricReport aggregate(std::vector<MetricCell> cells) {
  MetricReport report;
  report.cells = std::move(cells);
  std::vector<double> a, acc, e;
  for (const auto& c : report.cells) {
    a.push_back(c.auroc);
    acc.push_back(c.accuracy);
    e.push_back(c.ece);
  }
  report.auroc = mean_std(a);
  report.accuracy = mean_std(acc);
  report.ece = mean_std(e);
  return report;
}

MetricReport cross_validate(const Matrix& X, std::span<const int> y, const CvConfig& cfg) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw DimensionError("feature rows and labels differ in count");
  if (cfg.seeds.empty()) throw ConfigError("cross-validation needs at least one seed");
  cfg.probe.validate();

  std::vector<FoldPlan> plans;
  for (auto seed : cfg.seeds) plans.push_back(stratified_kfold(y, cfg.folds, seed));

  const std::size_t n_cells = plans.size() * cfg.folds;
  std::vector<MetricCell> cells(n_cells);
  parallel_for(n_cells, cfg.jobs, [&](std::size_t c) {
    const FoldPlan& plan = plans[c / cfg.folds];
    const std::size_t fold = c % cfg.folds;
    std::vector<std::size_t> train_idx, valid_idx;
    for (std::size_t i = 0; i < plan.fold_of.size(); ++i) (plan.fold_of[i] == fold ? valid_idx : train_idx).push_back(i);
    MetricCell cell = evaluate_split(X, y, train_idx, valid_idx, cfg);
    cell.seed = plan.seed;
    cell.fold = fold;
    cells[c] = cell;
  });
  return aggregate(std::move(cells));
}

MetricReport holdout_validate(const Matrix& X, std::span<const int> y, const CvConfig& cfg, double valid_fraction) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw DimensionError("feature rows and labels differ in count");
  if (cfg.seeds.empty()) throw ConfigError("holdout evaluation needs at least one seed");
  cfg.probe.validate();
  std::vector<MetricCell> cells(cfg.seeds.size());
  parallel_for(cells.size(), cfg.jobs, [&](std::size_t s) {
    const auto split = stratified_holdout(y, valid_fraction, cfg.seeds[s]);
    MetricCell cell = evaluate_split(X, y, split.train, split.valid, cfg);
    cell.seed = cfg.seeds[s];
    cells[s] = cell;
  });
  return aggregate(std::move(cells));
}

Matrix select_rows(const Matrix& X, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Matrix drop_columns(const Matrix& X, std::span<const std::size_t> columns) {
  std::vector<bool> drop(static_cast<std::size_t>(X.cols()), false);
  for (auto c : columns) {
    if (c >= drop.size()) throw DimensionError("column " + std::to_string(c) + " out of range");
    drop[c] = true;
  }
  std::vector<Eigen::Index> keep;
  for (std::size_t j = 0; j < drop.size(); ++j)
    if (!drop[j]) keep.push_back(static_cast<Eigen::Index>(j));
  Matrix out(X.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = X.col(keep[j]);
  return out;
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"seed", c.seed},
                     {"fold", c.fold},
                     {"n_train", c.n_train},
                     {"n_valid", c.n_valid},
                     {"auroc", c.auroc},
                     {"accuracy", c.accuracy},
                     {"ece", c.ece},
                     {"iterations", c.iterations}});
  }
  auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  return {{"auroc", ms(report.auroc)}, {"accuracy", ms(report.accuracy)}, {"ece", ms(report.ece)}, {"cells", cells}};
}

}  // namespace attndiv
