// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reference implementations used as test oracles. Each evaluates its
// definition directly, in long double, sharing no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "attndiv/probe.hpp"

namespace oracle {

inline long double xlogx_ratio(long double p, long double q, long double eps) {
  if (p == 0.0L) return 0.0L;
  return p * (std::log(std::max(p, eps)) - std::log(std::max(q, eps)));
}

/// sum p ln(p / q), term by term.
template <typename T>
long double kl(std::span<const T> p, std::span<const T> q, long double eps = 1e-12L) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) s += xlogx_ratio(p[i], q[i], eps);
  return s;
}

/// ln T - H(p), with 0 ln 0 = 0.
template <typename T>
long double kl_uniform(std::span<const T> p, long double eps = 1e-12L) {
  long double h = 0.0L;
  for (auto v : p)
    if (v > 0) h -= static_cast<long double>(v) * std::log(std::max(static_cast<long double>(v), eps));
  return std::log(static_cast<long double>(p.size())) - h;
}

/// Exhaustive pair count with ties worth one half.
inline double auroc_pairs(std::span<const double> s, std::span<const int> y) {
  long long wins2 = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      wins2 += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(wins2) / (2.0 * static_cast<double>(pairs));
}

/// Negative log-likelihood plus lambda ||w||_1, summing each term in long
/// double through log1p(exp(.)).
inline long double objective(std::span<const double> w, double b, const attndiv::Matrix& X, std::span<const int> y,
                             double lambda) {
  long double s = 0.0L;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    long double z = b;
    for (Eigen::Index j = 0; j < X.cols(); ++j) z += static_cast<long double>(w[static_cast<std::size_t>(j)]) * X(i, j);
    // -ln sigmoid(z) = ln(1 + e^-z); -ln(1 - sigmoid(z)) = ln(1 + e^z)
    const long double t = y[static_cast<std::size_t>(i)] == 1 ? -z : z;
    s += t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
  }
  for (double v : w) s += lambda * std::fabs(static_cast<long double>(v));
  return s;
}

/// Bin k covers (k/n, (k+1)/n], bin 0 also takes 0. Bin index found by a
/// linear scan over the edges.
inline double ece(std::span<const double> p, std::span<const int> y, std::size_t n_bins) {
  std::vector<long double> conf(n_bins, 0), acc(n_bins, 0);
  std::vector<std::size_t> cnt(n_bins, 0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::size_t b = 0;
    while (b + 1 < n_bins && p[i] > static_cast<double>(b + 1) / static_cast<double>(n_bins)) ++b;
    conf[b] += p[i];
    acc[b] += y[i];
    ++cnt[b];
  }
  long double e = 0;
  for (std::size_t b = 0; b < n_bins; ++b)
    if (cnt[b]) e += std::fabs(acc[b] / cnt[b] - conf[b] / cnt[b]) * cnt[b] / static_cast<long double>(p.size());
  return static_cast<double>(e);
}

struct GridResult {
  std::vector<double> w;
  double b = 0.0;
  long double value = 0.0L;
};

/// Minimizes `objective` over (w, b) in [-10, 10]^(d+1) by nested grids.
/// Level 0 has step 0.5; each level re-centres on the best point with a
/// window of +-2 old steps and a step five times finer, down to 8e-4.
/// Coordinates are integer multiples of the step, so 0 is always on the grid.
inline GridResult lasso_grid(const attndiv::Matrix& X, std::span<const int> y, double lambda) {
  const std::size_t dims = static_cast<std::size_t>(X.cols()) + 1;
  std::vector<long long> centre(dims, 0), best(dims, 0), idx(dims);
  double step = 0.5;
  long long radius = 20;  // level 0 spans +-10
  GridResult out;
  out.value = INFINITY;
  for (int level = 0; level < 5; ++level) {
    std::fill(idx.begin(), idx.end(), -radius);
    while (true) {
      std::vector<double> w(dims - 1);
      bool inside = true;
      for (std::size_t d = 0; d < dims; ++d) {
        const double v = static_cast<double>(centre[d] + idx[d]) * step;
        if (std::fabs(v) > 10.0 + 1e-9) inside = false;
        if (d + 1 < dims) w[d] = v;
      }
      if (inside) {
        const double b = static_cast<double>(centre[dims - 1] + idx[dims - 1]) * step;
        const long double f = objective(w, b, X, y, lambda);
        if (f < out.value) {
          out = {w, b, f};
          for (std::size_t d = 0; d < dims; ++d) best[d] = centre[d] + idx[d];
        }
      }
      std::size_t d = 0;
      while (d < dims && idx[d] == radius) idx[d++] = -radius;
      if (d == dims) break;
      ++idx[d];
    }
    for (std::size_t d = 0; d < dims; ++d) best[d] = centre[d] = best[d] * 5;
    step /= 5.0;
    radius = 10;
  }
  return out;
}

}  // namespace oracle
