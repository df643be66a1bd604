// SPDX-License-Identifier: Apache-2.0
#include "attndiv/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "attndiv/error.hpp"

namespace attndiv {
namespace {

// Smooth part of the objective at (w, b); fills the gradient when asked.
double nll_and_gradient(const Vector& w, double b, const Matrix& X, std::span<const int> y,
                        Vector* grad_w, double* grad_b) {
  const Vector z = (X * w).array() + b;
  double f = 0.0;
  Vector r(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    const double yi = static_cast<double>(y[static_cast<std::size_t>(i)]);
    f += softplus(zi) - yi * zi;
    r[i] = sigmoid(zi) - yi;
  }
  if (grad_w) *grad_w = X.transpose() * r;
  if (grad_b) *grad_b = r.sum();
  return f;
}

void check_inputs(const Matrix& X, std::span<const int> y) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) {
    throw DimensionError("feature matrix has " + std::to_string(X.rows()) + " rows but " +
                         std::to_string(y.size()) + " labels");
  }
  for (int v : y) {
    if (v != 0 && v != 1) throw ValidationError("labels must be 0 or 1");
  }
}

}  // namespace

void TrainConfig::validate() const {
  std::ostringstream why;
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) why << "lambda must be a finite value >= 0; ";
  if (max_iter < 1) why << "max_iter must be >= 1; ";
  if (!(tol > 0.0)) why << "tol must be > 0; ";
  if (!(kkt_tol > 0.0)) why << "kkt_tol must be > 0; ";
  if (!why.str().empty()) throw ConfigError("invalid probe config: " + why.str());
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) noexcept { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double soft_threshold(double z, double tau) noexcept {
  if (z > tau) return z - tau;
  if (z < -tau) return z + tau;
  return 0.0;
}

double objective(const Vector& w, double b, const Matrix& X, std::span<const int> y, double lambda) {
  check_inputs(X, y);
  if (w.size() != X.cols()) throw DimensionError("weight length does not match feature count");
  return nll_and_gradient(w, b, X, y, nullptr, nullptr) + lambda * w.lpNorm<1>();
}

void nll_gradient(const Vector& w, double b, const Matrix& X, std::span<const int> y, Vector& grad_w,
                  double& grad_b) {
  check_inputs(X, y);
  if (w.size() != X.cols()) throw DimensionError("weight length does not match feature count");
  nll_and_gradient(w, b, X, y, &grad_w, &grad_b);
}

double kkt_residual(const Vector& w, double b, const Matrix& X, std::span<const int> y, double lambda,
                    const std::vector<bool>& frozen) {
  Vector gw;
  double gb = 0.0;
  nll_gradient(w, b, X, y, gw, gb);
  double worst = std::abs(gb);
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    if (!frozen.empty() && frozen[static_cast<std::size_t>(j)]) continue;
    const double v = w[j] != 0.0 ? std::abs(gw[j] + lambda * (w[j] > 0.0 ? 1.0 : -1.0))
                                 : std::max(0.0, std::abs(gw[j]) - lambda);
    worst = std::max(worst, v);
  }
  return worst;
}

Standardization fit_standardization(const Matrix& X) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  Standardization s{Vector::Zero(d), Vector::Ones(d), std::vector<bool>(static_cast<std::size_t>(d), false)};
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto col = X.col(j);
    const bool constant = n == 0 || (col.array() == col[0]).all();
    if (constant) {
      s.means[j] = n == 0 ? 0.0 : col[0];
      s.stds[j] = 1.0;
      s.constant[static_cast<std::size_t>(j)] = true;
      continue;
    }
    const double mean = col.mean();
    const double var = (col.array() - mean).square().mean();
    const double sd = std::sqrt(var);
    s.means[j] = mean;
    s.stds[j] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Matrix apply_standardization(const Matrix& X, const Vector& means, const Vector& stds) {
  if (X.cols() != means.size() || X.cols() != stds.size()) {
    throw DimensionError("feature length " + std::to_string(X.cols()) + " does not match model length " +
                         std::to_string(means.size()));
  }
  Matrix out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j) out(i, j) = (X(i, j) - means[j]) / stds[j];
  return out;
}

ProbeModel train(const Matrix& X_raw, std::span<const int> y, const TrainConfig& cfg, FitTrace* trace) {
  cfg.validate();
  check_inputs(X_raw, y);
  if (!X_raw.allFinite()) throw ValidationError("feature matrix contains non-finite values");
  const auto n_pos = std::count(y.begin(), y.end(), 1);
  if (y.size() < 2 || n_pos == 0 || n_pos == static_cast<long>(y.size())) {
    throw DegenerateLabelError("training labels need at least two examples and both classes");
  }

  const Eigen::Index d = X_raw.cols();
  const double n = static_cast<double>(y.size());
  const double lambda = cfg.lambda;

  Standardization st = fit_standardization(X_raw);
  if (!cfg.standardize) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!st.constant[static_cast<std::size_t>(j)]) {
        st.means[j] = 0.0;
        st.stds[j] = 1.0;
      }
    }
  }
  const Matrix X = apply_standardization(X_raw, st.means, st.stds);
  const std::vector<bool>& frozen = st.constant;

  // Lower bound on the Lipschitz constant of the smooth part; backtracking
  // raises it as needed.
  double lip = 0.25 * n;
  for (Eigen::Index j = 0; j < d; ++j) lip = std::max(lip, 0.25 * X.col(j).squaredNorm());

  Vector xw = Vector::Zero(d);
  double xb = 0.0;
  double fx = nll_and_gradient(xw, xb, X, y, nullptr, nullptr) + lambda * xw.lpNorm<1>();
  Vector yw = xw;
  double yb = xb;
  bool y_is_x = true;
  double t = 1.0;

  Vector gw(d), nw(d);
  double gb = 0.0;
  int stalled = 0;
  int iter = 0;
  FitTrace local;
  local.objective.push_back(fx);

  while (iter < cfg.max_iter) {
    ++iter;
    const double fy = nll_and_gradient(yw, yb, X, y, &gw, &gb);
    double fn = 0.0;
    double nb = 0.0;
    for (;;) {
      for (Eigen::Index j = 0; j < d; ++j) {
        nw[j] = frozen[static_cast<std::size_t>(j)] ? 0.0 : soft_threshold(yw[j] - gw[j] / lip, lambda / lip);
      }
      nb = yb - gb / lip;
      fn = nll_and_gradient(nw, nb, X, y, nullptr, nullptr);
      const Vector dw = nw - yw;
      const double db = nb - yb;
      const double model = fy + gw.dot(dw) + gb * db + 0.5 * lip * (dw.squaredNorm() + db * db);
      if (fn <= model + 1e-12 * std::max(1.0, std::abs(fy))) break;
      lip *= 2.0;
    }
    const double fnew = fn + lambda * nw.lpNorm<1>();

    if (fnew > fx) {
      if (y_is_x) {
        // a plain proximal step no longer lowers the objective in floating point
        local.converged = true;
        break;
      }
      yw = xw;
      yb = xb;
      y_is_x = true;
      t = 1.0;
      ++local.restarts;
      continue;
    }

    const double rel = (fx - fnew) / std::max(1.0, std::abs(fnew));
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_next;
    yw = nw + beta * (nw - xw);
    yb = nb + beta * (nb - xb);
    y_is_x = beta == 0.0;
    xw = nw;
    xb = nb;
    fx = fnew;
    t = t_next;
    local.objective.push_back(fx);

    if (rel <= cfg.tol) {
      if (kkt_residual(xw, xb, X, y, lambda, frozen) <= cfg.kkt_tol * n) {
        local.converged = true;
        break;
      }
      stalled = rel <= 1e-15 ? stalled + 1 : 0;
      if (stalled >= 200) break;
    } else {
      stalled = 0;
    }
  }
  if (!local.converged && kkt_residual(xw, xb, X, y, lambda, frozen) <= cfg.kkt_tol * n) local.converged = true;

  ProbeModel model;
  model.weights = xw;
  model.intercept = xb;
  model.lambda = lambda;
  model.means = st.means;
  model.stds = st.stds;
  model.n_iterations_used = iter;
  if (trace) *trace = std::move(local);
  return model;
}

std::vector<double> decision_function(const ProbeModel& model, const Matrix& X) {
  if (static_cast<std::size_t>(X.cols()) != model.feature_len()) {
    throw DimensionError("feature length " + std::to_string(X.cols()) + " does not match model length " +
                         std::to_string(model.feature_len()));
  }
  const Matrix Xs = apply_standardization(X, model.means, model.stds);
  const Vector z = (Xs * model.weights).array() + model.intercept;
  return {z.data(), z.data() + z.size()};
}

std::vector<double> predict_proba(const ProbeModel& model, const Matrix& X) {
  auto z = decision_function(model, X);
  for (double& v : z) v = sigmoid(v);
  return z;
}

nlohmann::json ProbeModel::to_json() const {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"lambda", lambda},
          {"weights", vec(weights)},
          {"intercept", intercept},
          {"means", vec(means)},
          {"stds", vec(stds)},
          {"n_iterations_used", n_iterations_used},
          {"feature_len", feature_len()}};
}

ProbeModel ProbeModel::from_json(const nlohmann::json& j) {
  ProbeModel m;
  try {
    auto vec = [&j](const char* key) {
      const auto v = j.at(key).get<std::vector<double>>();
      return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    m.lambda = j.at("lambda").get<double>();
    m.weights = vec("weights");
    m.intercept = j.at("intercept").get<double>();
    m.means = vec("means");
    m.stds = vec("stds");
    m.n_iterations_used = j.at("n_iterations_used").get<int>();
    const auto len = j.at("feature_len").get<std::size_t>();
    if (len != m.feature_len() || m.means.size() != m.weights.size() || m.stds.size() != m.weights.size()) {
      throw SchemaError("model vectors disagree with feature_len");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed model document: ") + e.what());
  }
  if ((m.stds.array() <= 0.0).any()) throw SchemaError("model stds must be > 0");
  return m;
}

void ProbeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json().dump(2) << '\n';
}

ProbeModel ProbeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("model file is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

}  // namespace attndiv
