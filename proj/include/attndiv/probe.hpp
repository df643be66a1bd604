// SPDX-License-Identifier: Apache-2.0
#pragma once

// L1-regularized logistic regression probe.
//
// Minimizes the sum-form negative log-likelihood plus lambda * ||w||_1 with
// an unpenalized intercept, using FISTA with backtracking and a restart
// whenever an accelerated step would increase the objective.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace attndiv {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct TrainConfig {
  double lambda = 1.0;
  int max_iter = 20000;
  /// Relative objective change below which the solver may stop.
  double tol = 1e-7;
  /// Per-example optimality residual that must also hold before stopping.
  double kkt_tol = 1e-9;
  bool standardize = true;

  void validate() const;
};

struct ProbeModel {
  Vector weights;  // one per standardized feature
  double intercept = 0.0;
  double lambda = 1.0;
  Vector means;
  Vector stds;
  int n_iterations_used = 0;

  std::size_t feature_len() const noexcept { return static_cast<std::size_t>(weights.size()); }

  nlohmann::json to_json() const;
  static ProbeModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ProbeModel load(const std::filesystem::path& path);
};

/// Accepted-iterate objective values of one fit.
struct FitTrace {
  std::vector<double> objective;
  int restarts = 0;
  /// Stopping rule met, or a proximal step could no longer lower the
  /// objective in floating point.
  bool converged = false;
};

/// Per-column (mean, std) with population std; constant columns get mean equal
/// to their value and std 1 so that they standardize to exact zeros.
struct Standardization {
  Vector means;
  Vector stds;
  std::vector<bool> constant;
};

Standardization fit_standardization(const Matrix& X);
Matrix apply_standardization(const Matrix& X, const Vector& means, const Vector& stds);

double sigmoid(double z) noexcept;
/// log(1 + exp(z)) without overflow.
double softplus(double z) noexcept;

/// -sum[y ln p + (1 - y) ln(1 - p)] + lambda ||w||_1 with p = sigmoid(Xw + b).
double objective(const Vector& w, double b, const Matrix& X, std::span<const int> y, double lambda);

/// Gradient of the smooth part (negative log-likelihood) at (w, b).
void nll_gradient(const Vector& w, double b, const Matrix& X, std::span<const int> y, Vector& grad_w,
                  double& grad_b);

/// sign(z) * max(|z| - tau, 0).
double soft_threshold(double z, double tau) noexcept;

/// Largest KKT violation at (w, b), in units of the summed loss. Columns
/// flagged in `frozen` are ignored.
double kkt_residual(const Vector& w, double b, const Matrix& X, std::span<const int> y, double lambda,
                    const std::vector<bool>& frozen = {});

/// Throws DegenerateLabelError if y has a single class, ValidationError on a
/// non-finite feature or a label outside {0, 1}, DimensionError on shape
/// mismatch.
ProbeModel train(const Matrix& X, std::span<const int> y, const TrainConfig& cfg = {},
                 FitTrace* trace = nullptr);

/// Raw linear score w^T x~ + b per row.
std::vector<double> decision_function(const ProbeModel& model, const Matrix& X);
std::vector<double> predict_proba(const ProbeModel& model, const Matrix& X);

}  // namespace attndiv
