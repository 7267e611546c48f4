#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hdrobust/errors.hpp"
#include "hdrobust/estimators.hpp"
#include "hdrobust/geometry.hpp"

namespace hdrobust {

enum class LossKind { least_squares, logistic, huber, hinge, absolute };

// A supported loss with its smoothness class and growth metadata. The growth
// constants bound |ℓ(z,y)| <= c1 + c2 |z-y|^2 and |ℓ'(z,y)| <= d1 + d2 |z-y|;
// they document the loss, no algorithm consumes them.
struct LossModel {
  LossKind kind = LossKind::least_squares;
  double huber_delta = 1.35;

  bool gradient_lipschitz = true;
  double smoothness = 1.0;       // γ when gradient_lipschitz
  double lipschitz_bound = 0.0;  // M_z otherwise

  double c1 = 0.0, c2 = 0.5;   // loss growth
  double d1 = 0.0, d2 = 1.0;   // derivative growth

  static LossModel make(LossKind kind, double huber_delta = 1.35) {
    LossModel m;
    m.kind = kind;
    m.huber_delta = huber_delta;
    switch (kind) {
      case LossKind::least_squares:
        m.gradient_lipschitz = true;
        m.smoothness = 1.0;
        m.c1 = 0.0; m.c2 = 0.5; m.d1 = 0.0; m.d2 = 1.0;
        break;
      case LossKind::logistic:
        m.gradient_lipschitz = true;
        m.smoothness = 0.25;
        m.c1 = 2.0; m.c2 = 0.5; m.d1 = 1.0; m.d2 = 0.0;
        break;
      case LossKind::huber:
        if (!(huber_delta > 0.0)) throw config_error("huber loss requires delta > 0");
        m.gradient_lipschitz = true;
        m.smoothness = 1.0;
        m.c1 = 0.0; m.c2 = 0.5; m.d1 = 0.0; m.d2 = 1.0;
        break;
      case LossKind::hinge:
        m.gradient_lipschitz = false;
        m.lipschitz_bound = 1.0;
        m.c1 = 2.5; m.c2 = 0.5; m.d1 = 1.0; m.d2 = 0.0;
        break;
      case LossKind::absolute:
        m.gradient_lipschitz = false;
        m.lipschitz_bound = 1.0;
        m.c1 = 0.5; m.c2 = 0.5; m.d1 = 1.0; m.d2 = 0.0;
        break;
    }
    return m;
  }

  static LossModel least_squares() { return make(LossKind::least_squares); }
  static LossModel logistic() { return make(LossKind::logistic); }
  static LossModel huber(double delta = 1.35) { return make(LossKind::huber, delta); }
  static LossModel hinge() { return make(LossKind::hinge); }
  static LossModel absolute() { return make(LossKind::absolute); }
};

namespace detail {

inline void check_prediction_pair(const LossModel& loss, double z, double y) {
  if (!std::isfinite(z) || !std::isfinite(y))
    throw config_error("loss: non-finite prediction or label");
  if ((loss.kind == LossKind::logistic || loss.kind == LossKind::hinge) &&
      !(y == 1.0 || y == -1.0))
    throw config_error("loss: logistic/hinge require labels in {-1, +1}");
}

}  // namespace detail

inline double loss_value(const LossModel& loss, double z, double y) {
  detail::check_prediction_pair(loss, z, y);
  switch (loss.kind) {
    case LossKind::least_squares:
      return 0.5 * (z - y) * (z - y);
    case LossKind::logistic: {
      const double m = z * y;
      // log(1 + e^{-m}) without overflow for large |m|
      return m > 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
    }
    case LossKind::huber: {
      const double r = std::abs(z - y);
      return r <= loss.huber_delta ? 0.5 * r * r
                                   : loss.huber_delta * (r - 0.5 * loss.huber_delta);
    }
    case LossKind::hinge:
      return std::max(0.0, 1.0 - z * y);
    case LossKind::absolute:
      return std::abs(z - y);
  }
  throw config_error("loss: unknown kind");
}

// Derivative in the prediction argument. Kinks use a fixed selection: hinge at
// margin 1 returns 0, absolute at z = y returns 0.
inline double loss_derivative(const LossModel& loss, double z, double y) {
  detail::check_prediction_pair(loss, z, y);
  switch (loss.kind) {
    case LossKind::least_squares:
      return z - y;
    case LossKind::logistic: {
      const double m = z * y;
      const double s = m > 0.0 ? std::exp(-m) / (1.0 + std::exp(-m)) : 1.0 / (1.0 + std::exp(m));
      return -y * s;
    }
    case LossKind::huber:
      return std::clamp(z - y, -loss.huber_delta, loss.huber_delta);
    case LossKind::hinge:
      return z * y < 1.0 ? -y : 0.0;
    case LossKind::absolute:
      return z > y ? 1.0 : (z < y ? -1.0 : 0.0);
  }
  throw config_error("loss: unknown kind");
}

// Immutable learning data. Covariates are flat rows (matrix covariates are
// flattened through the geometry's layout). `theta_star` and the outlier index
// set are bookkeeping for synthetic runs.
struct Dataset {
  Eigen::MatrixXd covariates;  // n x d
  Eigen::VectorXd labels;      // n
  std::optional<Eigen::VectorXd> theta_star;
  std::vector<int> outliers;   // sorted row indices

  int n() const { return static_cast<int>(covariates.rows()); }
  int dim() const { return static_cast<int>(covariates.cols()); }
};

// Loss + data + geometry. Homogeneous linear predictions <θ, X>; no intercept
// (append a constant feature if one is needed).
struct Problem {
  LossModel loss;
  const Dataset* data = nullptr;
  Geometry geometry;

  Problem(LossModel l, const Dataset& d, Geometry g)
      : loss(l), data(&d), geometry(std::move(g)) {
    if (d.dim() != geometry.dim())
      throw config_error("problem: covariate dimension " + std::to_string(d.dim()) +
                         " does not match geometry dimension " + std::to_string(geometry.dim()));
    if (d.n() < 1) throw config_error("problem: empty dataset");
    if (d.labels.size() != d.n()) throw config_error("problem: label count mismatch");
  }
};

namespace detail {

inline void check_theta(const Problem& problem, const Eigen::VectorXd& theta) {
  if (theta.size() != problem.geometry.dim())
    throw config_error("parameter dimension mismatch");
  if (!theta.allFinite()) throw numerical_error("non-finite parameter");
}

}  // namespace detail

// Per-sample gradients G_i(θ) = ℓ'(<θ, X_i>, Y_i) X_i for the selected rows,
// one gradient per output row. Each row is exactly collinear with its covariate
// row; the row order follows `rows`.
inline Eigen::MatrixXd gradient_samples(const Problem& problem, const Eigen::VectorXd& theta,
                                        std::span<const int> rows) {
  detail::check_theta(problem, theta);
  const Dataset& data = *problem.data;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), data.dim());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = data.covariates.row(rows[k]);
  const Eigen::VectorXd z = out * theta;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    out.row(r) *= loss_derivative(problem.loss, z[r], data.labels[rows[k]]);
  }
  return out;
}

inline Eigen::MatrixXd gradient_samples(const Problem& problem, const Eigen::VectorXd& theta) {
  detail::check_theta(problem, theta);
  const Dataset& data = *problem.data;
  const Eigen::VectorXd z = data.covariates * theta;
  Eigen::VectorXd derivs(data.n());
  for (int i = 0; i < data.n(); ++i)
    derivs[i] = loss_derivative(problem.loss, z[i], data.labels[i]);
  return data.covariates.array().colwise() * derivs.array();
}

// Trimmed mean of the per-sample losses over the selected rows; the objective
// monitor used everywhere in place of a plain empirical average.
inline double robust_objective_estimate(const Problem& problem, const Eigen::VectorXd& theta,
                                        double alpha, std::span<const int> rows) {
  detail::check_theta(problem, theta);
  if (rows.size() < 2) throw config_error("robust objective: need at least 2 samples");
  const Dataset& data = *problem.data;
  std::vector<double> losses(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int i = rows[k];
    losses[k] = loss_value(problem.loss, data.covariates.row(i).dot(theta), data.labels[i]);
  }
  return trimmed_mean(losses, alpha);
}

inline double robust_objective_estimate(const Problem& problem, const Eigen::VectorXd& theta,
                                        double alpha) {
  std::vector<int> rows(static_cast<std::size_t>(problem.data->n()));
  std::iota(rows.begin(), rows.end(), 0);
  return robust_objective_estimate(problem, theta, alpha, rows);
}

}  // namespace hdrobust
