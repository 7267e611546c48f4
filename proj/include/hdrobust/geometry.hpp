#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "hdrobust/errors.hpp"

namespace hdrobust {

enum class GeometryKind { vanilla, group, lowrank };

// Ball Θ = { θ : ||θ - center|| <= radius } in the geometry's norm.
struct BallConstraint {
  Eigen::VectorXd center;
  double radius = 0.0;
};

namespace detail {

inline bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

// Magnitudes and multiplier of argmin { <w, φ> + c_eff * Ω(φ)^2-type DGF : Σ mag <= radius }.
struct ProxKernelResult {
  Eigen::VectorXd magnitudes;
  double lambda = 0.0;
};

// Shared scalar kernel for the ball prox in all three geometries. `u` holds the
// nonnegative dual magnitudes (row norms, or singular values), `alpha_exp` is the
// conjugate exponent 1/(p-1), and the constraint is Σ magnitudes <= radius. Power
// terms are evaluated on magnitudes normalized by their maximum so that exponents
// as large as 12*log(2q) stay representable.
inline ProxKernelResult scaled_power_prox(const Eigen::VectorXd& u, double c_eff,
                                          double alpha_exp, double radius) {
  const auto n = u.size();
  ProxKernelResult out;
  out.magnitudes = Eigen::VectorXd::Zero(n);

  const double u_max = (n > 0) ? u.maxCoeff() : 0.0;
  if (u_max <= 0.0) return out;

  const double outer_exp = -(alpha_exp - 1.0) / (alpha_exp + 1.0);
  auto eval = [&](double lambda, Eigen::VectorXd* mags) -> double {
    double t_max = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) t_max = std::max(t_max, u[i] - lambda);
    if (t_max <= 0.0) {
      if (mags) mags->setZero();
      return 0.0;
    }
    double s1 = 0.0, s2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = u[i] - lambda;
      if (t <= 0.0) continue;
      const double a = t / t_max;
      const double pa = std::pow(a, alpha_exp);
      s1 += pa;
      s2 += pa * a;
    }
    const double shrink = std::pow(s2, outer_exp);
    const double base = t_max / (2.0 * c_eff);
    if (mags) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double t = u[i] - lambda;
        (*mags)[i] = (t > 0.0) ? base * std::pow(t / t_max, alpha_exp) * shrink : 0.0;
      }
    }
    return base * s1 * shrink;
  };

  if (eval(0.0, nullptr) <= radius) {
    eval(0.0, &out.magnitudes);
    out.lambda = 0.0;
    return out;
  }

  // Smallest λ >= 0 with Σ magnitudes <= radius; the map is continuous and
  // nonincreasing, so bisection on [0, u_max] applies. The upper end of the
  // bracket is kept feasible throughout.
  double lo = 0.0, hi = u_max;
  const double tol = 1e-12 * u_max;
  bool converged = false;
  for (int it = 0; it < 200; ++it) {
    if (hi - lo <= tol) {
      converged = true;
      break;
    }
    const double mid = 0.5 * (lo + hi);
    if (eval(mid, nullptr) > radius) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (!converged && hi - lo > tol) {
    throw numerical_error("prox bisection did not converge: interval " + std::to_string(hi - lo) +
                          " vs tolerance " + std::to_string(tol));
  }
  eval(hi, &out.magnitudes);
  out.lambda = hi;
  return out;
}

}  // namespace detail

// Bundles norm, dual norm, distance-generating function with its growth constants,
// the closed-form ball prox and the sparsification map for one of three parameter
// structures:
//   vanilla(d):        θ in R^d,            ||.||_1           vs ||.||_inf
//   group(rows, cols): θ in R^{rows x cols} ||.||_{1,2} rows  vs ||.||_{inf,2}
//   lowrank(p, q):     θ in R^{p x q}       nuclear           vs operator norm
// Parameters are carried as flat vectors. Group coordinates are laid out row by
// row (group i occupies [i*cols, (i+1)*cols)); low-rank matrices are flattened
// column-major as in Eigen.
class Geometry {
 public:
  static Geometry vanilla(int d) {
    if (d < 3) throw config_error("vanilla geometry requires d >= 3");
    return Geometry(GeometryKind::vanilla, d, 1);
  }

  static Geometry group(int rows, int cols) {
    if (rows < 3) throw config_error("group geometry requires at least 3 groups");
    if (cols < 1) throw config_error("group geometry requires cols >= 1");
    return Geometry(GeometryKind::group, rows, cols);
  }

  static Geometry lowrank(int rows, int cols) {
    if (cols < 2) throw config_error("lowrank geometry requires q >= 2");
    if (rows < cols) throw config_error("lowrank geometry requires p >= q");
    return Geometry(GeometryKind::lowrank, rows, cols);
  }

  GeometryKind kind() const { return kind_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int dim() const { return rows_ * cols_; }

  // DGF is ω(φ) = C * N(φ)^2 with N the p-norm of row norms (resp. Schatten p-norm).
  double dgf_constant() const { return dgf_c_; }
  double dgf_exponent() const { return dgf_p_; }
  // Quadratic growth constant ν in ω(φ) <= ν ||φ||^2.
  double quad_growth() const { return nu_; }

  // Number of coordinates / groups / singular values available to the sparsifier.
  int sparsity_capacity() const {
    return kind_ == GeometryKind::lowrank ? cols_ : rows_;
  }

  std::vector<std::vector<int>> coordinate_groups() const {
    if (kind_ == GeometryKind::lowrank)
      throw config_error("coordinate groups are undefined for the lowrank geometry");
    std::vector<std::vector<int>> groups(static_cast<std::size_t>(rows_));
    for (int i = 0; i < rows_; ++i) {
      groups[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(cols_));
      for (int j = 0; j < cols_; ++j) groups[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = i * cols_ + j;
    }
    return groups;
  }

  double norm(const Eigen::VectorXd& v) const {
    check_shape(v);
    if (kind_ == GeometryKind::lowrank) return singular_values(v).sum();
    return row_norms(v).sum();
  }

  double dual_norm(const Eigen::VectorXd& v) const {
    check_shape(v);
    if (kind_ == GeometryKind::lowrank) {
      const Eigen::VectorXd s = singular_values(v);
      return s.size() > 0 ? s.maxCoeff() : 0.0;
    }
    return row_norms(v).maxCoeff();
  }

  double dgf_value(const Eigen::VectorXd& v) const {
    check_shape(v);
    if (!detail::all_finite(v)) throw numerical_error("dgf_value: non-finite input");
    const Eigen::VectorXd mags =
        (kind_ == GeometryKind::lowrank) ? singular_values(v) : row_norms(v);
    const double q = pnorm(mags, dgf_p_);
    return dgf_c_ * q * q;
  }

  Eigen::VectorXd dgf_gradient(const Eigen::VectorXd& v) const {
    return dgf_value_grad(v).second;
  }

  // Returns (ω(φ), ∇ω(φ)). ∇ω(0) = 0 by the squared-norm convention; the Euler
  // identity <∇ω(φ), φ> = 2 ω(φ) holds since ω is 2-homogeneous.
  std::pair<double, Eigen::VectorXd> dgf_value_grad(const Eigen::VectorXd& v) const {
    check_shape(v);
    if (!detail::all_finite(v)) throw numerical_error("dgf_value_grad: non-finite input");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim());
    if (kind_ == GeometryKind::lowrank) {
      Eigen::Map<const Eigen::MatrixXd> m(v.data(), rows_, cols_);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const Eigen::VectorXd& s = svd.singularValues();
      const double h = pnorm(s, dgf_p_);
      const double value = dgf_c_ * h * h;
      if (h > 0.0) {
        const double r = dgf_p_ - 1.0;
        Eigen::VectorXd sr(s.size());
        for (Eigen::Index j = 0; j < s.size(); ++j) sr[j] = (s[j] > 0.0) ? std::pow(s[j], r) : 0.0;
        Eigen::MatrixXd g =
            2.0 * dgf_c_ * std::pow(h, 1.0 - r) * svd.matrixU() * sr.asDiagonal() * svd.matrixV().transpose();
        grad = Eigen::Map<const Eigen::VectorXd>(g.data(), dim());
      }
      return {value, grad};
    }
    const Eigen::VectorXd mags = row_norms(v);
    const double q = pnorm(mags, dgf_p_);
    const double value = dgf_c_ * q * q;
    if (q > 0.0) {
      const double log_q = std::log(q);
      for (int i = 0; i < rows_; ++i) {
        const double u = mags[i];
        if (u <= 0.0) continue;
        // row gradient = 2C * q^{2-p} * u^{p-1} * (row / u)
        const double mag = 2.0 * dgf_c_ *
                           std::exp((2.0 - dgf_p_) * log_q + (dgf_p_ - 1.0) * std::log(u));
        grad.segment(i * cols_, cols_) = (mag / u) * v.segment(i * cols_, cols_);
      }
    }
    return {value, grad};
  }

  // argmin { <w, θ> + dgf_scale * ω(θ - center) : ||θ - center|| <= radius }.
  // Solved in shifted coordinates through the closed-form structure: active rows
  // (resp. singular directions) point against w and their magnitudes follow the
  // thresholded power law of the DGF, with the multiplier found by bisection.
  Eigen::VectorXd prox_ball(const Eigen::VectorXd& w, const BallConstraint& ball,
                            double dgf_scale = 1.0) const {
    check_shape(w);
    check_shape(ball.center);
    if (ball.radius <= 0.0) throw config_error("prox_ball: radius must be positive");
    if (dgf_scale <= 0.0) throw config_error("prox_ball: dgf scale must be positive");
    if (!detail::all_finite(w)) throw numerical_error("prox_ball: non-finite dual vector");

    const double c_eff = dgf_scale * dgf_c_;
    const double alpha_exp = 1.0 / (dgf_p_ - 1.0);
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(dim());

    if (kind_ == GeometryKind::lowrank) {
      Eigen::Map<const Eigen::MatrixXd> m(w.data(), rows_, cols_);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const auto res = detail::scaled_power_prox(svd.singularValues(), c_eff, alpha_exp, ball.radius);
      if (res.magnitudes.maxCoeff() > 0.0) {
        Eigen::MatrixXd p = -svd.matrixU() * res.magnitudes.asDiagonal() * svd.matrixV().transpose();
        phi = Eigen::Map<const Eigen::VectorXd>(p.data(), dim());
      }
    } else {
      const Eigen::VectorXd u = row_norms(w);
      const auto res = detail::scaled_power_prox(u, c_eff, alpha_exp, ball.radius);
      for (int i = 0; i < rows_; ++i) {
        if (res.magnitudes[i] > 0.0)
          phi.segment(i * cols_, cols_) = -(res.magnitudes[i] / u[i]) * w.segment(i * cols_, cols_);
      }
    }
    return ball.center + phi;
  }

  // Keep the s̄ largest coordinates / rows / singular values, zero the rest.
  // Ties break toward the lowest index; s̄ >= capacity returns the input as is.
  Eigen::VectorXd sparsify(const Eigen::VectorXd& v, int sbar) const {
    check_shape(v);
    if (sbar < 1 || sbar > sparsity_capacity())
      throw config_error("sparsify: target sparsity out of range [1, " +
                         std::to_string(sparsity_capacity()) + "]");
    if (sbar >= sparsity_capacity()) return v;

    if (kind_ == GeometryKind::lowrank) {
      Eigen::Map<const Eigen::MatrixXd> m(v.data(), rows_, cols_);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
      Eigen::MatrixXd out = svd.matrixU().leftCols(sbar) *
                            svd.singularValues().head(sbar).asDiagonal() *
                            svd.matrixV().leftCols(sbar).transpose();
      return Eigen::Map<const Eigen::VectorXd>(out.data(), dim());
    }

    const Eigen::VectorXd mags = row_norms(v);
    std::vector<int> order(static_cast<std::size_t>(rows_));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return mags[a] > mags[b]; });
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
    for (int k = 0; k < sbar; ++k) {
      const int i = order[static_cast<std::size_t>(k)];
      out.segment(i * cols_, cols_) = v.segment(i * cols_, cols_);
    }
    return out;
  }

  // Sparsity measure S(θ): nonzero coordinates, nonzero rows, or numerical rank.
  int sparsity(const Eigen::VectorXd& v, double rel_tol = 1e-9) const {
    check_shape(v);
    const Eigen::VectorXd mags =
        (kind_ == GeometryKind::lowrank) ? singular_values(v) : row_norms(v);
    const double top = mags.size() > 0 ? mags.maxCoeff() : 0.0;
    if (top <= 0.0) return 0;
    const double thresh = (kind_ == GeometryKind::lowrank) ? rel_tol * top : 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < mags.size(); ++i)
      if (mags[i] > thresh) ++count;
    return count;
  }

  bool contains(const Eigen::VectorXd& theta, const BallConstraint& ball,
                double slack = 1e-9) const {
    return norm(theta - ball.center) <= ball.radius * (1.0 + slack);
  }

 private:
  Geometry(GeometryKind kind, int rows, int cols) : kind_(kind), rows_(rows), cols_(cols) {
    if (kind == GeometryKind::lowrank) {
      const double r = 1.0 / (12.0 * std::log(2.0 * cols));
      dgf_p_ = 1.0 + r;
      dgf_c_ = 2.0 * std::exp(1.0) * std::log(2.0 * cols);
      nu_ = dgf_c_;
    } else {
      const double d = static_cast<double>(rows);
      const double p = 1.0 + 1.0 / std::log(d);
      dgf_p_ = p;
      dgf_c_ = 0.5 * std::exp(1.0) * std::log(d) *
               std::exp(std::log(d) * (p - 1.0) * (2.0 - p) / p);
      nu_ = 0.5 * std::exp(2.0) * std::log(d);
    }
  }

  void check_shape(const Eigen::VectorXd& v) const {
    if (v.size() != dim())
      throw config_error("parameter size " + std::to_string(v.size()) +
                         " does not match geometry dimension " + std::to_string(dim()));
  }

  // stableNorm: row magnitudes must survive entries near the double range limits
  Eigen::VectorXd row_norms(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(rows_);
    for (int i = 0; i < rows_; ++i) out[i] = v.segment(i * cols_, cols_).stableNorm();
    return out;
  }

  Eigen::VectorXd singular_values(const Eigen::VectorXd& v) const {
    Eigen::Map<const Eigen::MatrixXd> m(v.data(), rows_, cols_);
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
  }

  // p-norm of nonnegative magnitudes, normalized by the maximum entry.
  static double pnorm(const Eigen::VectorXd& mags, double p) {
    const double top = mags.size() > 0 ? mags.maxCoeff() : 0.0;
    if (top <= 0.0) return 0.0;
    double s = 0.0;
    for (Eigen::Index i = 0; i < mags.size(); ++i) {
      if (mags[i] > 0.0) s += std::pow(mags[i] / top, p);
    }
    return top * std::pow(s, 1.0 / p);
  }

  GeometryKind kind_;
  int rows_;
  int cols_;
  double dgf_p_ = 2.0;
  double dgf_c_ = 0.5;
  double nu_ = 1.0;
};

}  // namespace hdrobust
