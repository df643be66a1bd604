// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic random source shared by the synthetic generator, fold
// assignment, permutation and bootstrap code.
//
// The engine is MT19937-64 (fully specified by the C++ standard). The
// distribution transforms are implemented here rather than taken from
// <random>, whose distributions are implementation-defined, so a given seed
// yields the same stream on every platform.

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace attndiv {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1).
  double uniform_open();
  /// Uniform integer in [0, n). Unbiased (rejection sampling); n > 0.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via the Marsaglia polar method.
  double normal();
  /// Gamma(shape, 1) via Marsaglia-Tsang; shapes below 1 use the
  /// U^(1/shape) boost.
  double gamma(double shape);
  /// Symmetric Dirichlet(alpha, ..., alpha) of dimension n.
  std::vector<double> dirichlet(std::size_t n, double alpha);

  template <typename T>
  void shuffle(std::span<T> xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(xs[i - 1], xs[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace attndiv
