// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "attndiv/analysis.hpp"
#include "attndiv/cross_validation.hpp"
#include "attndiv/divergence.hpp"
#include "attndiv/dump.hpp"
#include "attndiv/error.hpp"
#include "attndiv/features_io.hpp"
#include "attndiv/metrics.hpp"
#include "attndiv/probe.hpp"
#include "attndiv/random.hpp"
#include "attndiv/sanity.hpp"
#include "attndiv/synthetic.hpp"
#include "oracles.hpp"

using namespace attndiv;
namespace fs = std::filesystem;

namespace {

const fs::path kData = ATTNDIV_TEST_DATA;

/// Collects failed checks of one criterion.
class Check {
 public:
  void operator()(bool ok, const std::string& what) {
    if (!ok && failures_++ < 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  void note(const std::string& s) { info_ += (info_.empty() ? "" : ", ") + s; }
  bool ok() const { return failures_ == 0; }
  std::string detail() const {
    if (ok()) return info_;
    return std::to_string(failures_) + " failed check(s): " + notes_ + (info_.empty() ? "" : " | " + info_);
  }

 private:
  int failures_ = 0;
  std::string notes_;
  std::string info_;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Matrix pooled_matrix(const std::vector<DumpExample>& dump, std::vector<int>& y, Scope scope = Scope::answer) {
  const std::size_t d = std::size_t{dump.front().meta.num_layers} * dump.front().meta.num_heads;
  Matrix X(static_cast<Eigen::Index>(dump.size()), static_cast<Eigen::Index>(d));
  y.clear();
  for (std::size_t i = 0; i < dump.size(); ++i) {
    const auto f = pool_features(compute_divergence_tensor(dump[i]), scope, Pooling::mean);
    for (std::size_t j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f.entries[j];
    y.push_back(*dump[i].meta.label);
  }
  return X;
}

SyntheticSpec separable_spec() {
  SyntheticSpec s;  // n 400, L 4, H 4, P 8, G 8, alpha 0.3 vs 3.0, seed 42
  s.n_examples = 400;
  s.layers = 4;
  s.heads = 4;
  s.prompt_len = 8;
  s.gen_len = 8;
  s.alpha_correct = 0.3;
  s.alpha_incorrect = 3.0;
  s.seed = 42;
  return s;
}

// ---------------------------------------------------------------------------

void kl_identity(Check& check) {
  Rng rng(2024);
  double worst_h = 0.0, worst_kl = 0.0;
  for (int r = 0; r < 10000; ++r) {
    const std::size_t T = 2 + rng.below(4095);
    std::vector<double> p;
    switch (r % 5) {
      case 0: p = rng.dirichlet(T, 0.01); break;
      case 1: p = rng.dirichlet(T, 0.3); break;
      case 2: p = rng.dirichlet(T, 3.0); break;
      case 3: p.assign(T, 1.0 / static_cast<double>(T)); break;
      default:
        p.assign(T, 0.0);
        p[rng.below(T)] = 1.0;
    }
    const std::vector<double> q(T, 1.0 / static_cast<double>(T));
    const double k = kl_to_uniform(std::span<const double>(p));
    const double h = static_cast<double>(oracle::kl_uniform(std::span<const double>(p)));
    const double g = kl_divergence(std::span<const double>(p), std::span<const double>(q));
    worst_h = std::max(worst_h, std::fabs(k - h));
    worst_kl = std::max(worst_kl, std::fabs(k - g));
  }
  check(worst_h <= 1e-9, "ln T - H mismatch " + fmt_sci(worst_h));
  check(worst_kl <= 1e-9, "general KL mismatch " + fmt_sci(worst_kl));
  check.note("max |kl - (lnT - H)| = " + fmt_sci(worst_h));
  check.note("max |kl - KL(p, U)| = " + fmt_sci(worst_kl));
}

void auroc_oracle(Check& check) {
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s;
    std::vector<int> y;
    do {
      const std::size_t n = 2 + rng.below(7);
      s.assign(n, 0.0);
      y.assign(n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = static_cast<double>(rng.below(4));
        y[i] = rng.bernoulli(0.5) ? 1 : 0;
      }
    } while (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0);
    worst = std::max(worst, std::fabs(auroc(s, y) - oracle::auroc_pairs(s, y)));
  }
  check(worst <= 1e-12, "midrank vs pair count " + fmt_sci(worst));
  check.note("max deviation " + fmt_sci(worst));
}

struct Problem {
  Matrix X;
  std::vector<int> y;
};

Problem logistic_problem(Rng& rng, std::size_t n, std::size_t d) {
  Problem p{Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)), std::vector<int>(n)};
  std::vector<double> beta(d);
  for (auto& b : beta) b = 1.5 * rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.2;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = rng.normal();
      p.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x;
      z += beta[j] * x;
    }
    p.y[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-z))) ? 1 : 0;
  }
  p.y[0] = 0;
  p.y[1] = 1;
  return p;
}

void lasso_oracle(Check& check) {
  Rng rng(99);
  double worst_gap = 0.0, worst_kkt = 0.0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t d = 1 + static_cast<std::size_t>(k % 2);
    const std::size_t n = 10 + rng.below(31);
    const auto p = logistic_problem(rng, n, d);
    const double lambda = 0.25 + 3.0 * rng.uniform();
    TrainConfig cfg;
    cfg.lambda = lambda;
    cfg.standardize = false;
    FitTrace trace;
    const auto m = train(p.X, p.y, cfg, &trace);
    const double got = objective(m.weights, m.intercept, p.X, p.y, lambda);
    const auto grid = oracle::lasso_grid(p.X, p.y, lambda);
    worst_gap = std::max(worst_gap, std::fabs(got - static_cast<double>(grid.value)));
    const double kkt = kkt_residual(m.weights, m.intercept, p.X, p.y, lambda);
    worst_kkt = std::max(worst_kkt, kkt / static_cast<double>(n));
    check(kkt <= 1e-4 * static_cast<double>(n), "KKT residual " + fmt_sci(kkt) + " on problem " + std::to_string(k));
    for (std::size_t i = 1; i < trace.objective.size(); ++i)
      check(trace.objective[i] <= trace.objective[i - 1], "objective increased on problem " + std::to_string(k));
  }
  check(worst_gap <= 1e-3, "grid gap " + fmt_sci(worst_gap));
  check.note("max |objective - grid optimum| = " + fmt_sci(worst_gap));
  check.note("max KKT / N = " + fmt_sci(worst_kkt));
}

void null_weights(Check& check) {
  Rng rng(5);
  double worst_b = 0.0;
  for (int k = 0; k < 10; ++k) {
    const auto p = logistic_problem(rng, 20 + rng.below(60), 1 + rng.below(8));
    const auto st = fit_standardization(p.X);
    const Matrix Xs = apply_standardization(p.X, st.means, st.stds);
    const double ybar = std::accumulate(p.y.begin(), p.y.end(), 0.0) / static_cast<double>(p.y.size());
    Vector r(static_cast<Eigen::Index>(p.y.size()));
    for (std::size_t i = 0; i < p.y.size(); ++i) r[static_cast<Eigen::Index>(i)] = p.y[i] - ybar;
    const double threshold = (Xs.transpose() * r).cwiseAbs().maxCoeff();
    TrainConfig cfg;
    cfg.lambda = threshold * 1.001;
    const auto m = train(p.X, p.y, cfg);
    check((m.weights.array() == 0.0).all(), "nonzero weight above threshold on problem " + std::to_string(k));
    worst_b = std::max(worst_b, std::fabs(m.intercept - std::log(ybar / (1.0 - ybar))));
  }
  check(worst_b <= 1e-6, "intercept off logit(ybar) by " + fmt_sci(worst_b));
  check.note("max |b - logit(ybar)| = " + fmt_sci(worst_b));
}

void end_to_end(Check& check) {
  std::vector<int> y;
  const Matrix X = pooled_matrix(generate_synthetic(separable_spec()), y);
  const auto r = cross_validate(X, y, CvConfig{});
  check(r.cells.size() == 15, "expected 15 cells");
  check(r.auroc.mean >= 0.95, "AUROC " + fmt(r.auroc.mean));
  check(r.ece.mean <= 0.10, "ECE " + fmt(r.ece.mean));

  auto control = separable_spec();
  control.alpha_correct = control.alpha_incorrect = 1.0;
  std::vector<int> yc;
  const Matrix Xc = pooled_matrix(generate_synthetic(control), yc);
  const auto rc = cross_validate(Xc, yc, CvConfig{});
  check(rc.auroc.mean >= 0.40 && rc.auroc.mean <= 0.60, "control AUROC " + fmt(rc.auroc.mean));
  check.note("AUROC " + fmt(r.auroc.mean) + " +- " + fmt(r.auroc.std));
  check.note("ECE " + fmt(r.ece.mean));
  check.note("equal-alpha AUROC " + fmt(rc.auroc.mean));
}

void permutation_null(Check& check) {
  const auto dump = generate_synthetic(separable_spec());
  std::vector<int> y;
  const Matrix X = pooled_matrix(dump, y);
  std::vector<DumpMetadata> meta;
  for (const auto& e : dump) meta.push_back(e.meta);
  SanityConfig cfg;
  cfg.permutations = 20;
  const auto rows = run_sanity_suite(meta, X, y, cfg);
  const auto& perm = rows.back();
  check(perm.name == "permuted_labels", "last row is not the permutation row");
  check(perm.auroc >= 0.45 && perm.auroc <= 0.55, "permuted AUROC " + fmt(perm.auroc));
  check.note("permuted AUROC " + fmt(perm.auroc) + " +- " + fmt(perm.std));
}

void pooling_decomposition(Check& check) {
  auto spec = separable_spec();
  spec.n_examples = 50;
  double worst = 0.0;
  for (const auto& ex : generate_synthetic(spec)) {
    const auto t = compute_divergence_tensor(ex);
    const auto prompt = pool_features(t, Scope::prompt, Pooling::mean).entries;
    const auto answer = pool_features(t, Scope::answer, Pooling::mean).entries;
    const auto full = pool_features(t, Scope::full, Pooling::mean).entries;
    const double np = static_cast<double>(t.count(RowKind::prompt));
    const double na = static_cast<double>(t.count(RowKind::generated));
    for (std::size_t j = 0; j < full.size(); ++j)
      worst = std::max(worst, std::fabs(full[j] - (np * prompt[j] + na * answer[j]) / (np + na)));
    for (auto scope : {Scope::prompt, Scope::answer, Scope::full}) {
      const auto mean = pool_features(t, scope, Pooling::mean).entries;
      const auto max = pool_features(t, scope, Pooling::max).entries;
      for (std::size_t j = 0; j < mean.size(); ++j) check(max[j] >= mean[j], "max below mean");
    }
  }
  check(worst <= 1e-9, "decomposition off by " + fmt_sci(worst));
  check.note("max deviation " + fmt_sci(worst));
}

void ece_oracle(Check& check) {
  Rng rng(31);
  std::vector<double> p(100000);
  std::vector<int> y(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.uniform();
    y[i] = rng.bernoulli(p[i]) ? 1 : 0;
  }
  const double calibrated = ece(p, y);
  const double adversarial = ece(std::vector<double>(1000, 0.7), std::vector<int>(1000, 1));
  check(calibrated <= 0.01, "calibrated ECE " + fmt(calibrated));
  check(std::fabs(adversarial - 0.3) <= 1e-12, "all-0.7 ECE " + fmt_sci(adversarial - 0.3) + " from 0.3");
  check.note("calibrated ECE " + fmt(calibrated));
  check.note("all-0.7 ECE - 0.3 = " + fmt_sci(adversarial - 0.3));
}

void ablation_structure(Check& check) {
  auto spec = separable_spec();
  spec.n_examples = 200;
  std::vector<int> y;
  const Matrix X = pooled_matrix(generate_synthetic(spec), y);
  const CvConfig cfg;
  const auto base = cross_validate(X, y, cfg);
  const auto ranking = rank_heads(train(X, y, cfg.probe), HeadGrid{4, 4});
  check(ablate_heads(X, y, ranking, 0, cfg) == base, "k = 0 report differs from baseline");

  std::vector<std::size_t> all(16);
  std::iota(all.begin(), all.end(), 0);
  const auto none = ablate_features(X, y, all, cfg);
  check(none.auroc.mean == 0.5, "remove-all AUROC " + fmt(none.auroc.mean, 17));
  for (const auto& c : none.cells) check(c.auroc == 0.5, "remove-all cell AUROC " + fmt(c.auroc, 17));

  for (std::size_t L = 3; L <= 64; ++L) {
    std::vector<int> hit(L, 0);
    for (auto g : {LayerGroup::early, LayerGroup::middle, LayerGroup::late}) {
      const auto r = layer_group_range(g, L);
      check(r.begin < r.end, "empty group at L = " + std::to_string(L));
      for (std::size_t l = r.begin; l < r.end && l < L; ++l) ++hit[l];
    }
    check(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }),
          "thirds do not partition L = " + std::to_string(L));
  }
  check.note("baseline AUROC " + fmt(base.auroc.mean));
}

void ecdf_properties(Check& check) {
  Rng rng(17);
  std::size_t covered = 0, points = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(100), b(100);
    for (double& v : a) v = std::exp(rng.normal());
    for (double& v : b) v = std::exp(rng.normal());

    const auto grid = threshold_grid(a, b, 101);
    const auto same = survival_diff_ci(a, a, grid, 200, 0.95, static_cast<std::uint64_t>(trial));
    for (std::size_t i = 0; i < grid.size(); ++i) {
      check(same.difference[i] == 0.0, "identical-group difference nonzero");
      check(same.lower[i] <= 0.0 && same.upper[i] >= 0.0, "identical-group band excludes 0");
    }

    // two samples from one distribution: the band should cover the true difference 0
    const auto c = survival_diff_ci(a, b, grid, 1000, 0.95, static_cast<std::uint64_t>(trial));
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (i > 0) {
        check(c.correct[i] <= c.correct[i - 1], "survival increased");
        check(c.incorrect[i] <= c.incorrect[i - 1], "survival increased");
      }
      covered += c.lower[i] <= 0.0 && c.upper[i] >= 0.0;
      ++points;
    }
  }
  const double coverage = static_cast<double>(covered) / static_cast<double>(points);
  check(coverage >= 0.93, "coverage " + fmt(coverage));
  check.note("coverage of 0 = " + fmt(coverage, 3));
}

void format_conformance(Check& check) {
  const auto dir = fs::temp_directory_path() / "attndiv_acceptance";
  fs::create_directories(dir);

  auto spec = separable_spec();
  spec.n_examples = 25;
  write_dump(generate_synthetic(spec), dir / "a.adv");
  write_dump(read_dump(dir / "a.adv"), dir / "b.adv");
  check(slurp(dir / "a.adv") == slurp(dir / "b.adv"), "synthetic dump round-trip differs");

  write_dump(read_dump(kData / "tiny.adv"), dir / "tiny.adv");
  check(slurp(dir / "tiny.adv") == slurp(kData / "tiny.adv"), "fixture dump rewrite differs");

  write_features(read_features(kData / "features.jsonl"), dir / "f.jsonl");
  check(slurp(dir / "f.jsonl") == slurp(kData / "features.jsonl"), "fixture feature rewrite differs");

  Rng rng(3);
  std::vector<FeatureRecord> recs;
  for (int i = 0; i < 5; ++i) {
    FeatureRecord r{"r" + std::to_string(i), i % 2, Scope::answer, Pooling::mean, {}};
    for (int j = 0; j < 16; ++j) r.features.push_back(rng.normal() * std::pow(10.0, j % 9 - 4));
    recs.push_back(r);
  }
  write_features(recs, dir / "g.jsonl");
  check(read_features(dir / "g.jsonl") == recs, "feature values changed on round-trip");

  auto rejects = [&](const fs::path& p, ErrorCode want) {
    try {
      read_dump(p);
    } catch (const Error& e) {
      return e.code() == want;
    }
    return false;
  };
  check(rejects(kData / "bad_magic.adv", ErrorCode::format), "bad magic not a format error");
  check(rejects(kData / "truncated.adv", ErrorCode::corruption), "truncation not a corruption error");
  check.note("dumps and features rewrite byte-identically");
  fs::remove_all(dir);
}

struct Criterion {
  const char* name;
  double limit_s;  // 0 = no runtime bound
  std::function<void(Check&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"KL identity", 5.0, kl_identity},
      {"AUROC oracle", 1.0, auroc_oracle},
      {"Lasso oracle", 30.0, lasso_oracle},
      {"Null-weight condition", 0.0, null_weights},
      {"End-to-end synthetic separation", 60.0, end_to_end},
      {"Permutation null", 0.0, permutation_null},
      {"Pooling decomposition", 0.0, pooling_decomposition},
      {"ECE calibration oracle", 0.0, ece_oracle},
      {"Ablation structure", 0.0, ablation_structure},
      {"ECDF properties", 0.0, ecdf_properties},
      {"Format conformance", 0.0, format_conformance},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(check);
    } catch (const std::exception& e) {
      check(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_s > 0.0) check(secs < c.limit_s, "runtime " + fmt(secs, 2) + " s over " + fmt(c.limit_s, 0) + " s");
    if (!check.ok()) ++failed;
    std::printf("%s  %-32s %7.2f s  %s\n", check.ok() ? "PASS" : "FAIL", c.name, secs, check.detail().c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
