#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hdrobust/errors.hpp"
#include "hdrobust/estimators.hpp"
#include "hdrobust/geometry.hpp"
#include "hdrobust/model.hpp"
#include "hdrobust/rng.hpp"

namespace hdrobust {

// Stagnation detector for the validation objective.
struct PlateauConfig {
  int window = 10;                   // >= 2
  double rel_tol = 1e-3;             // > 0
  double validation_fraction = 0.2;  // in (0, 1/2)
  double alpha_obj = 0.1;            // trimming level of the monitored objective
};

// True once the best value over the last `window` entries improves on the best
// of the preceding window by less than rel_tol * (1 + |best|). Histories shorter
// than two windows never plateau.
inline bool plateau_detect(const std::vector<double>& history, const PlateauConfig& cfg) {
  const int w = cfg.window;
  if (static_cast<int>(history.size()) < 2 * w) return false;
  const auto end = history.end();
  const double best_last = *std::min_element(end - w, end);
  const double best_prev = *std::min_element(end - 2 * w, end - w);
  return best_prev - best_last < cfg.rel_tol * (1.0 + std::abs(best_last));
}

enum class ScheduleMode { theoretical, practical };

// Multistage schedule. Theoretical mode follows the constant-driven stage
// lengths and radius contractions; practical mode keeps the radius constant and
// uses fixed or plateau-derived stage lengths.
struct SolverSchedule {
  ScheduleMode mode = ScheduleMode::practical;

  double r0 = 0.0;       // initial (practical: constant) radius, > 0
  double beta = 0.0;     // mirror-descent step size
  double da_step = 0.0;  // dual-averaging within-stage step; practical default r0/100
  int sbar = 0;          // sparsity bound applied at stage ends
  int stages = 0;        // theoretical: required K; practical: 0 = derive from max_iters

  // Theoretical-mode constants.
  double eps_bar = 0.0;        // high-probability gradient error bound
  double kappa = 0.0;          // quadratic / pseudo-linear minorization constant
  double lambda_growth = 0.0;  // pseudo-linear growth scale (dual averaging)
  double nu = 0.0;             // DGF quadratic growth; 0 = take the geometry's
  double lipschitz_m = 0.0;    // objective Lipschitz constant (dual averaging)

  // Practical-mode controls.
  int stage_length = 0;  // fixed per-stage iterations; 0 requires use_plateau
  long max_iters = 0;    // total gradient-iteration budget
  bool use_plateau = false;
  PlateauConfig plateau;

  bool data_splitting = false;      // fresh disjoint batch per iteration
  bool holdout_validation = false;  // exclude the validation subset from gradients
  int record_every = 1;
};

struct TraceRow {
  int stage = 0;
  long iter = 0;
  double elapsed_ms = 0.0;
  std::optional<double> l2_error;    // ||θ - θ*||_2 when the truth is known
  std::optional<double> norm_error;  // geometry norm of the difference
  double objective = 0.0;            // robust objective on the validation subset
};

struct StageSummary {
  int stage = 0;
  double radius = 0.0;  // ball radius used by the stage
  long length = 0;      // gradient iterations run
  double stage_l2 = std::numeric_limits<double>::quiet_NaN();  // error of the sparsified output
};

struct RunTrace {
  std::vector<TraceRow> rows;
  std::vector<StageSummary> stages;
};

struct SolverRun {
  Eigen::VectorXd theta_hat;
  RunTrace trace;
};

// Theoretical radius recursions, exposed for direct checking. Index k holds R_k.
inline std::vector<double> ammd_radius_schedule(double r0, double sbar, double eps_bar,
                                                double kappa, int stages) {
  std::vector<double> radii{r0};
  const double r_star = 40.0 * sbar * eps_bar / kappa;
  for (int k = 0; k < stages; ++k) radii.push_back(0.5 * (radii.back() + r_star));
  return radii;
}

inline std::vector<double> amda_radius_schedule(double r0, double tau, double r_star, int stages) {
  std::vector<double> radii{r0};
  for (int k = 0; k < stages; ++k)
    radii.push_back(std::max(tau * radii.back(), 0.5 * (radii.back() + r_star)));
  return radii;
}

namespace detail {

constexpr long kMaxStageLength = 50'000'000;
constexpr std::uint64_t kValidationStream = 0x7a11da7eULL;

}  // namespace detail

// One stage of mirror descent inside the ball B(center, R): each step estimates
// the gradient, forms w = β ĝ - ∇ω(θ - center) and applies the ball prox.
// Returns all iterates, starting point included.
inline std::vector<Eigen::VectorXd> md_stage(const Problem& pb, const GradientEstimator& est,
                                             const Eigen::VectorXd& center, double radius,
                                             double beta, int steps) {
  if (!(beta > 0.0)) throw config_error("md_stage: beta must be positive");
  if (steps < 1) throw config_error("md_stage: need at least one step");
  const BallConstraint ball{center, radius};
  std::vector<Eigen::VectorXd> iterates{center};
  Eigen::VectorXd theta = center;
  for (int t = 0; t < steps; ++t) {
    Eigen::VectorXd g = est(gradient_samples(pb, theta));
    if (!g.allFinite())
      throw numerical_error("md_stage: non-finite gradient estimate at iteration " +
                            std::to_string(t));
    const Eigen::VectorXd w = beta * g - pb.geometry.dgf_gradient(theta - center);
    theta = pb.geometry.prox_ball(w, ball);
    iterates.push_back(theta);
  }
  return iterates;
}

// One stage of dual averaging: keeps the weighted gradient sum, pulls
// θ_t+ = argmin <Σ a ĝ_i, θ> + γ_t ω(θ - center) over the ball and mixes
// θ_{t+1} = (1 - τ_t) θ_t + τ_t θ_t+ with τ_t = a/A_{t+1}. γ_t defaults to
// sqrt(t+1). Returns all iterates, starting point included.
inline std::vector<Eigen::VectorXd> da_stage(const Problem& pb, const GradientEstimator& est,
                                             const Eigen::VectorXd& center, double radius,
                                             double step_a, int steps,
                                             const std::function<double(int)>& gamma = {}) {
  if (!(step_a > 0.0)) throw config_error("da_stage: step must be positive");
  if (steps < 1) throw config_error("da_stage: need at least one step");
  const BallConstraint ball{center, radius};
  std::vector<Eigen::VectorXd> iterates{center};
  Eigen::VectorXd theta = center;
  Eigen::VectorXd weighted_sum = Eigen::VectorXd::Zero(pb.geometry.dim());
  for (int t = 0; t < steps; ++t) {
    Eigen::VectorXd g = est(gradient_samples(pb, theta));
    if (!g.allFinite())
      throw numerical_error("da_stage: non-finite gradient estimate at iteration " +
                            std::to_string(t));
    weighted_sum += step_a * g;
    const double gamma_t = gamma ? gamma(t) : std::sqrt(static_cast<double>(t) + 1.0);
    const Eigen::VectorXd theta_plus = pb.geometry.prox_ball(weighted_sum, ball, gamma_t);
    const double tau = 1.0 / (static_cast<double>(t) + 2.0);
    theta = (1.0 - tau) * theta + tau * theta_plus;
    iterates.push_back(theta);
  }
  return iterates;
}

namespace detail {

inline long checked_stage_length(double value, const char* what) {
  if (!(value > 0.0) || value > static_cast<double>(kMaxStageLength))
    throw config_error(std::string("infeasible schedule: ") + what + " evaluates to " +
                       std::to_string(value));
  return static_cast<long>(std::ceil(value));
}

inline void validate_schedule(const SolverSchedule& s, const Geometry& geom) {
  if (!(s.r0 > 0.0)) throw config_error("schedule: r0 must be positive");
  if (s.sbar < 1 || s.sbar > geom.sparsity_capacity())
    throw config_error("schedule: sbar must lie in [1, " +
                       std::to_string(geom.sparsity_capacity()) + "]");
  if (s.record_every < 1) throw config_error("schedule: record_every must be >= 1");
  if (s.plateau.window < 2) throw config_error("schedule: plateau window must be >= 2");
  if (!(s.plateau.rel_tol > 0.0)) throw config_error("schedule: plateau rel_tol must be positive");
  if (!(s.plateau.validation_fraction > 0.0 && s.plateau.validation_fraction < 0.5))
    throw config_error("schedule: validation fraction must lie in (0, 1/2)");
  if (!(s.plateau.alpha_obj >= 0.0 && s.plateau.alpha_obj < 0.5))
    throw config_error("schedule: alpha_obj must lie in [0, 1/2)");
  if (s.data_splitting && s.use_plateau)
    throw config_error("schedule: plateau stages cannot be combined with data splitting");
  if (s.mode == ScheduleMode::theoretical) {
    if (!(s.eps_bar > 0.0)) throw config_error("schedule: eps_bar must be positive");
    if (!(s.kappa > 0.0)) throw config_error("schedule: kappa must be positive");
    if (s.stages < 1) throw config_error("schedule: theoretical mode requires stages >= 1");
  } else {
    if (s.max_iters < 1) throw config_error("schedule: max_iters must be >= 1");
    if (s.stage_length < 1 && !s.use_plateau)
      throw config_error("schedule: practical mode needs stage_length or plateau detection");
    if (s.stage_length > 0 && s.max_iters < s.stage_length)
      throw config_error("schedule: max_iters smaller than one whole stage");
  }
}

enum class Algo { mirror_descent, dual_averaging };

inline SolverRun run_multistage(Algo algo, const Problem& pb, const GradientEstimator& est,
                                const SolverSchedule& sched, std::uint64_t seed,
                                const Eigen::VectorXd& theta0) {
  validate_schedule(sched, pb.geometry);
  const Geometry& geom = pb.geometry;
  const double nu = sched.nu > 0.0 ? sched.nu : geom.quad_growth();
  const bool theoretical = sched.mode == ScheduleMode::theoretical;

  double tau = 0.0, r_star = 0.0;
  long t_prime = 0;
  if (algo == Algo::mirror_descent) {
    if (!(sched.beta > 0.0)) throw config_error("schedule: mirror descent requires beta > 0");
  } else if (theoretical) {
    if (!(sched.lambda_growth > 0.0))
      throw config_error("schedule: theoretical dual averaging requires lambda_growth > 0");
    tau = 10.0 * std::sqrt(8.0 * sched.sbar) * sched.eps_bar / sched.kappa;
    if (!(tau < 1.0))
      throw config_error("schedule: contraction factor tau = " + std::to_string(tau) +
                         " must be < 1");
    r_star = 80.0 * sched.lambda_growth * sched.sbar * sched.eps_bar / sched.kappa;
    const double m = sched.lipschitz_m;
    t_prime = checked_stage_length(std::pow((nu + m * m) / sched.eps_bar, 2.0),
                                   "dual-averaging stage length");
  }

  const int n = pb.data->n();
  if (n < 2) throw config_error("solver: need at least 2 samples");

  // Validation subset: tail of a seeded shuffle. It always drives the monitored
  // objective; it is withheld from gradient estimation only on request.
  const auto order = shuffled_indices(n, derive_seed(seed, detail::kValidationStream));
  int n_val =
      static_cast<int>(std::ceil(sched.plateau.validation_fraction * static_cast<double>(n)));
  n_val = std::clamp(n_val, std::min(2, n), n);
  std::vector<int> val_idx(order.end() - n_val, order.end());
  std::vector<int> train_idx;
  if (sched.holdout_validation && n_val < n) {
    train_idx.assign(order.begin(), order.end() - n_val);
  } else {
    train_idx.resize(static_cast<std::size_t>(n));
    std::iota(train_idx.begin(), train_idx.end(), 0);
  }
  if (train_idx.size() < 2) throw config_error("solver: fewer than 2 training samples");

  RunTrace trace;
  const auto start = std::chrono::steady_clock::now();
  long trace_slot = 0;  // trace iteration index (gradient steps and sparsify events)
  long grad_iters = 0;  // gradient iterations only; this is what max_iters bounds

  const auto objective_at = [&](const Eigen::VectorXd& theta) {
    return robust_objective_estimate(pb, theta, sched.plateau.alpha_obj, val_idx);
  };
  const auto record = [&](int stage, const Eigen::VectorXd& theta, bool force) {
    if (!force && (trace_slot % sched.record_every) != 0) return;
    TraceRow row;
    row.stage = stage;
    row.iter = trace_slot;
    row.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    if (pb.data->theta_star) {
      const Eigen::VectorXd diff = theta - *pb.data->theta_star;
      row.l2_error = diff.norm();
      row.norm_error = geom.norm(diff);
    }
    row.objective = objective_at(theta);
    trace.rows.push_back(std::move(row));
  };

  Eigen::VectorXd theta_hat = theta0.size() > 0 ? theta0 : Eigen::VectorXd::Zero(geom.dim());
  if (theta_hat.size() != geom.dim()) throw config_error("solver: bad initial parameter size");
  if (!theta_hat.allFinite()) throw numerical_error("solver: non-finite initial parameter");
  record(0, theta_hat, true);

  double radius = sched.r0;
  const int stage_limit =
      theoretical ? sched.stages
                  : (sched.stages > 0 ? sched.stages : std::numeric_limits<int>::max());
  const long budget = theoretical ? std::numeric_limits<long>::max() : sched.max_iters;

  for (int k = 1; k <= stage_limit; ++k) {
    long planned;
    if (theoretical) {
      planned = (algo == Algo::mirror_descent)
                    ? checked_stage_length(nu * radius / (sched.beta * sched.eps_bar),
                                           "mirror-descent stage length")
                    : t_prime;
    } else if (sched.stage_length > 0) {
      if (grad_iters + sched.stage_length > budget) break;  // only whole stages run
      planned = sched.stage_length;
    } else {
      planned = budget - grad_iters;  // plateau decides, the budget caps
      if (planned < 1) break;
    }

    // Per-iteration disjoint batches, reshuffled per stage.
    std::vector<std::vector<int>> batches;
    if (sched.data_splitting) {
      const int n_train = static_cast<int>(train_idx.size());
      if (planned > n_train / 2)
        throw config_error("data splitting: stage length " + std::to_string(planned) +
                           " leaves batches of fewer than 2 samples");
      batches = split_indices(n_train, static_cast<int>(planned),
                              derive_seed(seed, 0x6a7cBULL + static_cast<std::uint64_t>(k)));
      for (auto& rows : batches)
        for (int& r : rows) r = train_idx[static_cast<std::size_t>(r)];
    }

    const Eigen::VectorXd center = theta_hat;
    const BallConstraint ball{center, radius};
    Eigen::VectorXd theta = center;
    Eigen::VectorXd weighted_sum = Eigen::VectorXd::Zero(geom.dim());
    const double step_a =
        (algo == Algo::dual_averaging)
            ? (theoretical ? radius : (sched.da_step > 0.0 ? sched.da_step : sched.r0 / 100.0))
            : 0.0;

    std::vector<double> stage_objectives;
    long ran = 0;
    for (long t = 0; t < planned; ++t) {
      const std::span<const int> rows =
          sched.data_splitting ? std::span<const int>(batches[static_cast<std::size_t>(t)])
                               : std::span<const int>(train_idx);
      Eigen::VectorXd g = est(gradient_samples(pb, theta, rows));
      if (g.size() != geom.dim())
        throw config_error("gradient estimator returned a wrong-sized vector");
      if (!g.allFinite())
        throw numerical_error("non-finite gradient estimate at stage " + std::to_string(k) +
                              ", iteration " + std::to_string(t));
      if (algo == Algo::mirror_descent) {
        const Eigen::VectorXd w = sched.beta * g - geom.dgf_gradient(theta - center);
        theta = geom.prox_ball(w, ball);
      } else {
        weighted_sum += step_a * g;
        const double gamma_t = std::sqrt(static_cast<double>(t) + 1.0);
        const Eigen::VectorXd theta_plus = geom.prox_ball(weighted_sum, ball, gamma_t);
        const double mix = 1.0 / (static_cast<double>(t) + 2.0);
        theta = (1.0 - mix) * theta + mix * theta_plus;
      }
      ++grad_iters;
      ++trace_slot;
      record(k, theta, false);
      ran = t + 1;
      if (!theoretical && sched.use_plateau) {
        stage_objectives.push_back(objective_at(theta));
        if (plateau_detect(stage_objectives, sched.plateau)) break;
      }
    }

    theta_hat = geom.sparsify(theta, sched.sbar);
    ++trace_slot;  // the sparsification event owns a trace slot
    record(k, theta_hat, true);

    StageSummary summary;
    summary.stage = k;
    summary.radius = radius;
    summary.length = ran;
    if (pb.data->theta_star) summary.stage_l2 = (theta_hat - *pb.data->theta_star).norm();
    trace.stages.push_back(summary);

    if (theoretical) {
      radius = (algo == Algo::mirror_descent)
                   ? 0.5 * (radius + 40.0 * sched.sbar * sched.eps_bar / sched.kappa)
                   : std::max(tau * radius, 0.5 * (radius + r_star));
    } else if (grad_iters >= budget) {
      break;
    }
  }

  return SolverRun{std::move(theta_hat), std::move(trace)};
}

}  // namespace detail

// Multistage mirror descent with per-stage sparsification and (theoretical mode)
// shrinking radii. theta0 defaults to the origin.
inline SolverRun ammd(const Problem& pb, const GradientEstimator& est,
                      const SolverSchedule& sched, std::uint64_t seed,
                      const Eigen::VectorXd& theta0 = Eigen::VectorXd()) {
  return detail::run_multistage(detail::Algo::mirror_descent, pb, est, sched, seed, theta0);
}

// Multistage dual averaging, same staging with the max-rule radius update.
inline SolverRun amda(const Problem& pb, const GradientEstimator& est,
                      const SolverSchedule& sched, std::uint64_t seed,
                      const Eigen::VectorXd& theta0 = Eigen::VectorXd()) {
  return detail::run_multistage(detail::Algo::dual_averaging, pb, est, sched, seed, theta0);
}

// Plug-in bound on the dual-norm gradient estimation error: 7 σ̂_max sqrt(4η +
// 6 (log(4/δ) + log d)/n) with σ̂_max from coordinatewise trimmed second moments
// at θ. Deliberately conservative; a starting point for theoretical schedules.
inline double suggest_error_bound(const Problem& pb, const Eigen::VectorXd& theta, double eta,
                                  double delta) {
  const int n = pb.data->n();
  const double alpha = alpha_from_budget(CorruptionBudget{eta, delta, n});
  const Eigen::MatrixXd g = gradient_samples(pb, theta);
  double max_s2 = 0.0;
  std::vector<double> column(static_cast<std::size_t>(n));
  std::vector<double> scratch;
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    Eigen::Map<Eigen::VectorXd>(column.data(), n) = g.col(j);
    const double center = detail::trimmed_mean_with_scratch(column, alpha, scratch);
    for (auto& v : column) v = (v - center) * (v - center);
    max_s2 = std::max(max_s2, detail::trimmed_mean_with_scratch(column, alpha, scratch));
  }
  const double d = static_cast<double>(pb.geometry.dim());
  return 7.0 * std::sqrt(max_s2) *
         std::sqrt(4.0 * eta + 6.0 * (std::log(4.0 / delta) + std::log(d)) / n);
}

}  // namespace hdrobust
