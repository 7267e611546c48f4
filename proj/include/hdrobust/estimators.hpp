#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hdrobust/errors.hpp"
#include "hdrobust/geometry.hpp"
#include "hdrobust/rng.hpp"

namespace hdrobust {

// k-th order statistic (1-based) via introselect. Input order is irrelevant.
inline double select_kth(std::span<const double> values, int k) {
  if (values.empty()) throw config_error("select_kth: empty input");
  if (k < 1 || k > static_cast<int>(values.size()))
    throw config_error("select_kth: rank " + std::to_string(k) + " out of range");
  std::vector<double> scratch(values.begin(), values.end());
  std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end());
  return scratch[static_cast<std::size_t>(k - 1)];
}

namespace detail {

// Winsorized half-sample mean: quantiles are taken on the first half of the
// sample, the clipped average runs over the second half. An odd trailing sample
// is dropped. `scratch` is reused across calls.
inline double trimmed_mean_with_scratch(std::span<const double> values, double alpha,
                                        std::vector<double>& scratch) {
  const std::size_t n_raw = values.size();
  if (n_raw < 2) throw config_error("trimmed_mean: need at least 2 samples");
  if (!(alpha >= 0.0 && alpha < 0.5))
    throw config_error("trimmed_mean: alpha must lie in [0, 1/2)");
  const std::size_t n = n_raw - (n_raw % 2);
  const std::size_t half = n / 2;

  const auto clamp_rank = [&](double x) {
    const auto r = static_cast<long>(std::floor(x));
    return static_cast<std::size_t>(std::clamp<long>(r, 1, static_cast<long>(half)));
  };
  const std::size_t rank_lo = clamp_rank(alpha * static_cast<double>(half));
  const std::size_t rank_hi = clamp_rank((1.0 - alpha) * static_cast<double>(half));

  scratch.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(half));
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(rank_hi - 1),
                   scratch.end());
  const double q_hi = scratch[rank_hi - 1];
  // The rank_lo-th smallest of the half lies within the first rank_hi elements.
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(rank_lo - 1),
                   scratch.begin() + static_cast<std::ptrdiff_t>(rank_hi));
  const double q_lo = scratch[rank_lo - 1];

  double sum = 0.0;
  for (std::size_t i = half; i < n; ++i) sum += std::clamp(values[i], q_lo, q_hi);
  return 2.0 * sum / static_cast<double>(n);
}

}  // namespace detail

inline double trimmed_mean(std::span<const double> values, double alpha) {
  std::vector<double> scratch;
  return detail::trimmed_mean_with_scratch(values, alpha, scratch);
}

// Applies the trimmed mean independently to every column of `samples` (one row
// per sample). Output shape equals the per-sample shape.
inline Eigen::VectorXd coordinatewise_trimmed_mean(const Eigen::MatrixXd& samples, double alpha) {
  const auto n = samples.rows();
  Eigen::VectorXd out(samples.cols());
  std::vector<double> column(static_cast<std::size_t>(n));
  std::vector<double> scratch;
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    Eigen::Map<Eigen::VectorXd>(column.data(), n) = samples.col(j);
    out[j] = detail::trimmed_mean_with_scratch(column, alpha, scratch);
  }
  return out;
}

// Corruption/confidence budget driving the trimming level.
struct CorruptionBudget {
  double eta = 0.0;    // corrupted fraction, < 1/8
  double delta = 0.0;  // failure probability
  int n = 0;           // sample count
};

// α = 8η + 12 log(4/δ)/n. Throws when the budget forces α >= 1/2, which signals
// that n is too small for the requested (η, δ).
inline double alpha_from_budget(const CorruptionBudget& budget) {
  if (!(budget.eta >= 0.0 && budget.eta < 0.125))
    throw config_error("alpha_from_budget: eta must lie in [0, 1/8)");
  if (budget.n < 2) throw config_error("alpha_from_budget: need n >= 2");
  const double floor_delta = 4.0 * std::exp(-0.5 * static_cast<double>(budget.n));
  if (!(budget.delta > floor_delta && budget.delta < 1.0))
    throw config_error("alpha_from_budget: delta outside (4 e^{-n/2}, 1)");
  const double alpha =
      8.0 * budget.eta + 12.0 * std::log(4.0 / budget.delta) / static_cast<double>(budget.n);
  if (alpha >= 0.5)
    throw config_error("alpha_from_budget: budget infeasible (alpha = " + std::to_string(alpha) +
                       " >= 1/2); increase n or relax eta/delta");
  return alpha;
}

namespace detail {

// Contiguous blocks over a seeded shuffle of [0, n); the n mod K surplus samples
// are dropped. Returns row indices per block, m = n / K rows each.
inline std::vector<std::vector<int>> mom_blocks(int n, int blocks, std::uint64_t seed) {
  if (blocks < 1) throw config_error("block estimators require K >= 1");
  if (blocks > n) throw config_error("block estimators require K <= n");
  const std::vector<int> idx = shuffled_indices(n, seed);
  const int m = n / blocks;
  std::vector<std::vector<int>> out(static_cast<std::size_t>(blocks));
  for (int b = 0; b < blocks; ++b)
    out[static_cast<std::size_t>(b)].assign(idx.begin() + static_cast<std::ptrdiff_t>(b) * m,
                                            idx.begin() + static_cast<std::ptrdiff_t>(b + 1) * m);
  return out;
}

// Lower median (k = ceil(K/2), 1-based) of the values.
inline double lower_median(std::vector<double>& v) {
  const auto k = (v.size() + 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end());
  return v[k - 1];
}

// Index whose ceil(K/2)-th smallest distance to the other block means (self
// included) is minimal; ties go to the lowest block index.
inline int select_central_block(const Eigen::MatrixXd& distances) {
  const auto k = distances.rows();
  const auto rank = static_cast<std::size_t>((k + 1) / 2);
  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<double> row(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) row[static_cast<std::size_t>(j)] = distances(i, j);
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(rank - 1), row.end());
    const double score = row[rank - 1];
    if (score < best_score) {
      best_score = score;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace detail

// Coordinatewise median-of-means over K seeded blocks.
inline Eigen::VectorXd coordinatewise_mom(const Eigen::MatrixXd& samples, int blocks,
                                          std::uint64_t seed) {
  const auto block_idx = detail::mom_blocks(static_cast<int>(samples.rows()), blocks, seed);
  Eigen::MatrixXd means(blocks, samples.cols());
  for (int b = 0; b < blocks; ++b) {
    means.row(b).setZero();
    for (int i : block_idx[static_cast<std::size_t>(b)]) means.row(b) += samples.row(i);
    means.row(b) /= static_cast<double>(block_idx[static_cast<std::size_t>(b)].size());
  }
  Eigen::VectorXd out(samples.cols());
  std::vector<double> column(static_cast<std::size_t>(blocks));
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    Eigen::Map<Eigen::VectorXd>(column.data(), blocks) = means.col(j);
    out[j] = detail::lower_median(column);
  }
  return out;
}

// Groupwise geometric median-of-means: within each coordinate group, the block
// mean with the smallest ceil(K/2)-th Euclidean distance to the others wins.
// Robust to under K/2 corrupted blocks, not to a constant corrupted fraction.
inline Eigen::VectorXd group_geometric_mom(const Eigen::MatrixXd& samples,
                                           const std::vector<std::vector<int>>& groups, int blocks,
                                           std::uint64_t seed) {
  const auto d = samples.cols();
  std::vector<char> seen(static_cast<std::size_t>(d), 0);
  for (const auto& g : groups) {
    for (int c : g) {
      if (c < 0 || c >= d || seen[static_cast<std::size_t>(c)])
        throw config_error("group_geometric_mom: groups must partition the coordinates");
      seen[static_cast<std::size_t>(c)] = 1;
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw config_error("group_geometric_mom: groups must cover every coordinate");

  const auto block_idx = detail::mom_blocks(static_cast<int>(samples.rows()), blocks, seed);
  Eigen::VectorXd out(d);
  for (const auto& g : groups) {
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(blocks, static_cast<Eigen::Index>(g.size()));
    for (int b = 0; b < blocks; ++b) {
      for (int i : block_idx[static_cast<std::size_t>(b)])
        for (std::size_t c = 0; c < g.size(); ++c)
          means(b, static_cast<Eigen::Index>(c)) += samples(i, g[c]);
      means.row(b) /= static_cast<double>(block_idx[static_cast<std::size_t>(b)].size());
    }
    Eigen::MatrixXd dist(blocks, blocks);
    for (int a = 0; a < blocks; ++a) {
      dist(a, a) = 0.0;
      for (int b = a + 1; b < blocks; ++b) {
        const double r = (means.row(a) - means.row(b)).norm();
        dist(a, b) = r;
        dist(b, a) = r;
      }
    }
    const int win = detail::select_central_block(dist);
    for (std::size_t c = 0; c < g.size(); ++c) out[g[c]] = means(win, static_cast<Eigen::Index>(c));
  }
  return out;
}

// Largest singular value by power iteration on M^T M with a seeded start.
inline double operator_norm(const Eigen::MatrixXd& m, std::uint64_t seed = 0xa55au) {
  if (m.size() == 0) return 0.0;
  if (m.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  std::mt19937_64 eng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(m.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = gauss(eng);
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < 1000; ++it) {
    Eigen::VectorXd mv = m * v;
    const double next = mv.norm();
    Eigen::VectorXd w = m.transpose() * mv;
    const double wn = w.norm();
    if (wn == 0.0) return next;
    v = w / wn;
    if (std::abs(next - sigma) <= 1e-10 * std::max(1.0, next)) return next;
    sigma = next;
  }
  return sigma;
}

// Catoni-style influence function: odd, ψ(x) = x + O(x^3) near zero, logarithmic
// growth for large |x|.
inline double psi_catoni(double x) {
  const double a = std::abs(x);
  const double v = std::log1p(a + 0.5 * a * a);
  return x < 0.0 ? -v : v;
}

// Recommended block count K = ceil(18 log(1/δ)) for failure probability δ.
inline int recommended_cm_mom_blocks(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw config_error("block count: delta must lie in (0,1)");
  return static_cast<int>(std::ceil(18.0 * std::log(1.0 / delta)));
}

// χ = sqrt(2 m log(8(p+q)) / v) for block size m and variance scale guess v.
inline double cm_mom_scale(int m, double v_guess, int p, int q) {
  if (m < 1 || p < 1 || q < 1) throw config_error("cm_mom_scale: dimensions must be positive");
  if (!(v_guess > 0.0)) throw config_error("cm_mom_scale: variance guess must be positive");
  return std::sqrt(2.0 * static_cast<double>(m) * std::log(8.0 * (p + q)) / v_guess);
}

namespace detail {

// Truncated block mean on the symmetric dilation [[0, A], [A^T, 0]]: each sample's
// dilation eigenvalues λ are mapped through χ ψ(λ/χ), the transformed matrices are
// averaged and the top-right p x q block is returned. `psi` is injectable so tests
// can drop the truncation.
template <class Psi>
Eigen::MatrixXd minsker_block_mean_impl(std::span<const Eigen::MatrixXd> block, double chi,
                                        Psi&& psi) {
  if (block.empty()) throw config_error("minsker_block_mean: empty block");
  if (!(chi > 0.0)) throw config_error("minsker_block_mean: scale must be positive");
  const auto p = block[0].rows();
  const auto q = block[0].cols();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p + q, p + q);
  Eigen::MatrixXd dil = Eigen::MatrixXd::Zero(p + q, p + q);
  for (const Eigen::MatrixXd& a : block) {
    if (a.rows() != p || a.cols() != q)
      throw config_error("minsker_block_mean: inconsistent sample shapes");
    if (!a.allFinite()) throw numerical_error("minsker_block_mean: non-finite sample");
    dil.setZero();
    dil.topRightCorner(p, q) = a;
    dil.bottomLeftCorner(q, p) = a.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dil);
    if (eig.info() != Eigen::Success)
      throw numerical_error("minsker_block_mean: eigendecomposition failed");
    Eigen::VectorXd lam = eig.eigenvalues();
    for (Eigen::Index j = 0; j < lam.size(); ++j) lam[j] = chi * psi(lam[j] / chi);
    acc.noalias() += eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  }
  acc /= static_cast<double>(block.size());
  return acc.topRightCorner(p, q);
}

template <class Psi>
Eigen::MatrixXd cm_mom_impl(std::span<const Eigen::MatrixXd> samples, int blocks, double chi,
                            std::uint64_t seed, Psi&& psi) {
  const int n = static_cast<int>(samples.size());
  const auto block_idx = mom_blocks(n, blocks, seed);
  std::vector<Eigen::MatrixXd> means;
  means.reserve(static_cast<std::size_t>(blocks));
  std::vector<Eigen::MatrixXd> scratch;
  for (const auto& idx : block_idx) {
    scratch.clear();
    for (int i : idx) scratch.push_back(samples[static_cast<std::size_t>(i)]);
    means.push_back(minsker_block_mean_impl(std::span<const Eigen::MatrixXd>(scratch), chi, psi));
  }
  Eigen::MatrixXd dist(blocks, blocks);
  for (int a = 0; a < blocks; ++a) {
    dist(a, a) = 0.0;
    for (int b = a + 1; b < blocks; ++b) {
      const double r = operator_norm(means[static_cast<std::size_t>(a)] -
                                         means[static_cast<std::size_t>(b)],
                                     derive_seed(seed, 1000u + static_cast<std::uint64_t>(a) *
                                                                   static_cast<std::uint64_t>(blocks) +
                                                                   static_cast<std::uint64_t>(b)));
      dist(a, b) = r;
      dist(b, a) = r;
    }
  }
  return means[static_cast<std::size_t>(select_central_block(dist))];
}

}  // namespace detail

inline Eigen::MatrixXd minsker_block_mean(std::span<const Eigen::MatrixXd> block, double chi) {
  return detail::minsker_block_mean_impl(block, chi, [](double x) { return psi_catoni(x); });
}

// Matrix-mean estimator: K truncated block means on the dilation, then selection
// of the block mean with the smallest ceil(K/2)-th operator-norm distance to the
// others. Tolerates a small number of outlier samples (of the order of K/12).
inline Eigen::MatrixXd cm_mom(std::span<const Eigen::MatrixXd> samples, int blocks, double chi,
                              std::uint64_t seed) {
  return detail::cm_mom_impl(samples, blocks, chi, seed, [](double x) { return psi_catoni(x); });
}

// Crude robust guess of the variance scale v(A) from entrywise trimmed first and
// second moments: max row/column sum of entrywise variances.
inline double estimate_matrix_variance_scale(std::span<const Eigen::MatrixXd> samples,
                                             double alpha = 0.1) {
  if (samples.size() < 2) throw config_error("variance scale estimate: need at least 2 samples");
  const auto p = samples[0].rows();
  const auto q = samples[0].cols();
  const auto n = samples.size();
  Eigen::MatrixXd m2(p, q);
  std::vector<double> cell(n);
  std::vector<double> scratch;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < q; ++j) {
      for (std::size_t s = 0; s < n; ++s) cell[s] = samples[s](i, j);
      const double center = detail::trimmed_mean_with_scratch(cell, alpha, scratch);
      for (std::size_t s = 0; s < n; ++s) cell[s] = (cell[s] - center) * (cell[s] - center);
      m2(i, j) = detail::trimmed_mean_with_scratch(cell, alpha, scratch);
    }
  }
  const double row_sum = m2.rowwise().sum().maxCoeff();
  const double col_sum = m2.colwise().sum().maxCoeff();
  return std::max({row_sum, col_sum, 1e-12});
}

// Choice and parameters of the robust gradient estimator.
struct EstimatorSpec {
  enum class Kind { mean, trimmed_mean, coord_mom, group_geometric_mom, cm_mom };
  Kind kind = Kind::trimmed_mean;
  double alpha = 0.25;   // trimming level
  int blocks = 10;       // K for the block estimators
  double chi = 0.0;      // cm_mom scale; 0 = derive from v_guess or the data
  double v_guess = 0.0;  // variance scale for the derived χ; 0 = estimate per call
};

inline void validate(const EstimatorSpec& spec, int n_samples) {
  switch (spec.kind) {
    case EstimatorSpec::Kind::mean:
      return;
    case EstimatorSpec::Kind::trimmed_mean:
      if (!(spec.alpha >= 0.0 && spec.alpha < 0.5))
        throw config_error("estimator: alpha must lie in [0, 1/2)");
      return;
    case EstimatorSpec::Kind::coord_mom:
    case EstimatorSpec::Kind::group_geometric_mom:
    case EstimatorSpec::Kind::cm_mom:
      if (spec.blocks < 1 || spec.blocks > n_samples)
        throw config_error("estimator: block count must lie in [1, n]");
      if (spec.kind == EstimatorSpec::Kind::cm_mom && spec.chi < 0.0)
        throw config_error("estimator: cm_mom scale must be positive or 0 (auto)");
      return;
  }
  throw config_error("estimator: unknown kind");
}

using GradientEstimator = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

// Binds an estimator spec to a geometry: matrix-shaped estimators reshape the
// flat gradient rows through the geometry's layout.
inline GradientEstimator make_gradient_estimator(const EstimatorSpec& spec, const Geometry& geom,
                                                 std::uint64_t seed) {
  switch (spec.kind) {
    case EstimatorSpec::Kind::mean:
      return [](const Eigen::MatrixXd& samples) -> Eigen::VectorXd {
        return samples.colwise().mean();
      };
    case EstimatorSpec::Kind::trimmed_mean: {
      const double alpha = spec.alpha;
      return [alpha](const Eigen::MatrixXd& samples) {
        return coordinatewise_trimmed_mean(samples, alpha);
      };
    }
    case EstimatorSpec::Kind::coord_mom: {
      const int blocks = spec.blocks;
      return [blocks, seed](const Eigen::MatrixXd& samples) {
        return coordinatewise_mom(samples, blocks, seed);
      };
    }
    case EstimatorSpec::Kind::group_geometric_mom: {
      const int blocks = spec.blocks;
      const auto groups = geom.coordinate_groups();
      return [blocks, seed, groups](const Eigen::MatrixXd& samples) {
        return group_geometric_mom(samples, groups, blocks, seed);
      };
    }
    case EstimatorSpec::Kind::cm_mom: {
      const int blocks = spec.blocks;
      const int p = (geom.kind() == GeometryKind::lowrank) ? geom.rows() : geom.dim();
      const int q = (geom.kind() == GeometryKind::lowrank) ? geom.cols() : 1;
      const double chi = spec.chi;
      const double v_guess = spec.v_guess;
      const bool lowrank = geom.kind() == GeometryKind::lowrank;
      return [blocks, seed, p, q, chi, v_guess, lowrank](const Eigen::MatrixXd& samples) {
        const int n = static_cast<int>(samples.rows());
        std::vector<Eigen::MatrixXd> mats;
        mats.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
          Eigen::VectorXd row = samples.row(i);
          if (lowrank) {
            mats.emplace_back(Eigen::Map<const Eigen::MatrixXd>(row.data(), p, q));
          } else {
            mats.emplace_back(Eigen::Map<const Eigen::MatrixXd>(row.data(), p, 1));
          }
        }
        double scale = chi;
        if (scale <= 0.0) {
          const double v =
              v_guess > 0.0 ? v_guess : estimate_matrix_variance_scale(mats);
          scale = cm_mom_scale(std::max(1, n / blocks), v, p, q);
        }
        const Eigen::MatrixXd est = cm_mom(mats, blocks, scale, seed);
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(est.data(), est.size()));
      };
    }
  }
  throw config_error("estimator: unknown kind");
}

}  // namespace hdrobust
