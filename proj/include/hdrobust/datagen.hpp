#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hdrobust/errors.hpp"
#include "hdrobust/model.hpp"
#include "hdrobust/rng.hpp"

namespace hdrobust {

enum class CovariateDist { gaussian, student };
enum class NoiseDist { pareto, gaussian };
enum class TaskKind { regression, logistic_classification };

// Synthetic problem description: diagonal covariance with entries drawn
// uniformly from [cov_low, cov_high], Gaussian or multivariate-Student
// covariates, Pareto (centered) or Gaussian regression noise, s-sparse truth.
struct SynthConfig {
  int n = 0;
  int d = 0;
  int s = 0;
  double cov_low = 1.0;
  double cov_high = 10.0;
  CovariateDist covariates = CovariateDist::gaussian;
  double student_dof = 4.1;  // > 2 so the covariance correction is defined
  NoiseDist noise = NoiseDist::pareto;
  double pareto_shape = 2.05;  // > 2 keeps the noise variance finite
  double noise_sigma = 1.0;
  TaskKind task = TaskKind::regression;
  double theta_magnitude = 1.0;
  std::optional<Eigen::VectorXd> theta_explicit;
};

inline void validate(const SynthConfig& c) {
  if (c.n < 1 || c.d < 1) throw config_error("synth: n and d must be positive");
  if (c.s < 0 || c.s > c.d) throw config_error("synth: s must lie in [0, d]");
  if (!(c.cov_low > 0.0 && c.cov_high >= c.cov_low))
    throw config_error("synth: covariance range must satisfy 0 < low <= high");
  if (c.covariates == CovariateDist::student && !(c.student_dof > 2.0))
    throw config_error("synth: student dof must exceed 2");
  if (c.noise == NoiseDist::pareto && !(c.pareto_shape > 2.0))
    throw config_error("synth: pareto shape must exceed 2");
  if (c.noise == NoiseDist::gaussian && !(c.noise_sigma >= 0.0))
    throw config_error("synth: noise sigma must be nonnegative");
  if (!(std::isfinite(c.theta_magnitude))) throw config_error("synth: bad theta magnitude");
  if (c.theta_explicit && c.theta_explicit->size() != c.d)
    throw config_error("synth: explicit theta has the wrong dimension");
}

// Deterministic in (config, seed); independent sub-streams per ingredient.
inline Dataset generate(const SynthConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Dataset out;

  std::mt19937_64 diag_eng = make_engine(seed, 1);
  std::mt19937_64 support_eng = make_engine(seed, 2);
  std::mt19937_64 cov_eng = make_engine(seed, 3);
  std::mt19937_64 mix_eng = make_engine(seed, 4);
  std::mt19937_64 noise_eng = make_engine(seed, 5);

  std::uniform_real_distribution<double> unif(cfg.cov_low, cfg.cov_high);
  Eigen::VectorXd sigma_diag(cfg.d);
  for (int j = 0; j < cfg.d; ++j) sigma_diag[j] = unif(diag_eng);
  const Eigen::VectorXd scale = sigma_diag.cwiseSqrt();

  Eigen::VectorXd theta_star;
  if (cfg.theta_explicit) {
    theta_star = *cfg.theta_explicit;
  } else {
    theta_star = Eigen::VectorXd::Zero(cfg.d);
    std::vector<int> pool(static_cast<std::size_t>(cfg.d));
    std::iota(pool.begin(), pool.end(), 0);
    for (int k = 0; k < cfg.s; ++k) {
      std::uniform_int_distribution<int> pick(k, cfg.d - 1);
      std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick(support_eng))]);
      std::uniform_int_distribution<int> coin(0, 1);
      theta_star[pool[static_cast<std::size_t>(k)]] =
          coin(support_eng) == 0 ? cfg.theta_magnitude : -cfg.theta_magnitude;
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  out.covariates.resize(cfg.n, cfg.d);
  if (cfg.covariates == CovariateDist::gaussian) {
    for (int i = 0; i < cfg.n; ++i)
      for (int j = 0; j < cfg.d; ++j) out.covariates(i, j) = gauss(cov_eng) * scale[j];
  } else {
    // Multivariate t: one chi-square mixing variable per row, scale corrected by
    // (dof-2)/dof so the population covariance equals the diagonal target.
    const double dof = cfg.student_dof;
    std::chi_squared_distribution<double> chisq(dof);
    const double corr = std::sqrt((dof - 2.0) / dof);
    for (int i = 0; i < cfg.n; ++i) {
      const double mix = std::sqrt(chisq(mix_eng) / dof);
      for (int j = 0; j < cfg.d; ++j)
        out.covariates(i, j) = gauss(cov_eng) / mix * corr * scale[j];
    }
  }

  out.labels.resize(cfg.n);
  if (cfg.task == TaskKind::regression) {
    const Eigen::VectorXd signal = out.covariates * theta_star;
    if (cfg.noise == NoiseDist::pareto) {
      // Standard Pareto(a) on [1, inf) shifted by its mean a/(a-1) so the noise
      // is centered and theta_star stays the risk minimizer.
      const double a = cfg.pareto_shape;
      const double mean = a / (a - 1.0);
      std::uniform_real_distribution<double> u01(std::numeric_limits<double>::min(), 1.0);
      for (int i = 0; i < cfg.n; ++i)
        out.labels[i] = signal[i] + std::pow(u01(noise_eng), -1.0 / a) - mean;
    } else {
      for (int i = 0; i < cfg.n; ++i)
        out.labels[i] = signal[i] + cfg.noise_sigma * gauss(noise_eng);
    }
  } else {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < cfg.n; ++i) {
      const double z = out.covariates.row(i).dot(theta_star);
      const double p = 1.0 / (1.0 + std::exp(-z));
      out.labels[i] = u01(noise_eng) < p ? 1.0 : -1.0;
    }
  }

  out.theta_star = theta_star;
  return out;
}

enum class CorruptionMode { large_magnitude, adversarial_response, label_flip_scale };

// Replaces floor(eta * n) uniformly chosen rows; every untouched row is preserved
// bit-exactly and the corrupted index set is recorded in the output.
inline Dataset corrupt(const Dataset& data, double eta, CorruptionMode mode, double factor,
                       std::uint64_t seed) {
  if (!(eta >= 0.0 && eta < 0.5)) throw config_error("corrupt: eta must lie in [0, 1/2)");
  if (!(factor > 0.0)) throw config_error("corrupt: factor must be positive");
  Dataset out = data;
  const int n = data.n();
  const int m = static_cast<int>(std::floor(eta * n));
  if (m == 0) return out;

  const auto order = shuffled_indices(n, derive_seed(seed, 11));
  std::vector<int> hit(order.begin(), order.begin() + m);
  std::sort(hit.begin(), hit.end());
  std::vector<char> is_hit(static_cast<std::size_t>(n), 0);
  for (int i : hit) is_hit[static_cast<std::size_t>(i)] = 1;

  double clean_x_max = 0.0, clean_y_max = 0.0, clean_row_norm_max = 0.0;
  for (int i = 0; i < n; ++i) {
    if (is_hit[static_cast<std::size_t>(i)]) continue;
    clean_x_max = std::max(clean_x_max, data.covariates.row(i).cwiseAbs().maxCoeff());
    clean_y_max = std::max(clean_y_max, std::abs(data.labels[i]));
    clean_row_norm_max = std::max(clean_row_norm_max, data.covariates.row(i).norm());
  }
  if (clean_x_max == 0.0) clean_x_max = 1.0;
  if (clean_row_norm_max == 0.0) clean_row_norm_max = 1.0;

  std::mt19937_64 eng = make_engine(seed, 12);
  std::normal_distribution<double> gauss(0.0, 1.0);

  switch (mode) {
    case CorruptionMode::large_magnitude: {
      const double target = factor * clean_x_max;
      const double y_target = factor * std::max(clean_y_max, 1.0);
      for (int i : hit) {
        const double row_max = out.covariates.row(i).cwiseAbs().maxCoeff();
        if (row_max > 0.0) {
          out.covariates.row(i) *= target / row_max;
        } else {
          out.covariates(i, 0) = target;
        }
        out.labels[i] = y_target;
      }
      break;
    }
    case CorruptionMode::adversarial_response: {
      Eigen::VectorXd dir(data.dim());
      for (Eigen::Index j = 0; j < dir.size(); ++j) dir[j] = gauss(eng);
      dir.normalize();
      const double big = 100.0 * std::max(clean_y_max, 1.0);
      for (int i : hit) {
        out.covariates.row(i) = (clean_row_norm_max * dir).transpose();
        double response = -big;
        if (data.theta_star) {
          const double z = dir.dot(*data.theta_star);
          response = z >= 0.0 ? -big : big;
        }
        out.labels[i] = response;
      }
      break;
    }
    case CorruptionMode::label_flip_scale: {
      for (int i : hit) {
        out.covariates.row(i) *= factor;
        out.labels[i] = -out.labels[i];
      }
      break;
    }
  }

  std::vector<int> merged = out.outliers;
  merged.insert(merged.end(), hit.begin(), hit.end());
  std::sort(merged.begin(), merged.end());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
  out.outliers = std::move(merged);
  return out;
}

enum class LabelMode { binary, numeric };

namespace detail {

inline double parse_cell(const std::string& cell, int line_no) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end)
    throw config_error("csv parse error at line " + std::to_string(line_no) +
                       ": invalid numeric value '" + cell + "'");
  return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  for (auto& cell : cells) {
    const auto first = cell.find_first_not_of(" \t");
    const auto last = cell.find_last_not_of(" \t");
    cell = (first == std::string::npos) ? std::string() : cell.substr(first, last - first + 1);
  }
  return cells;
}

}  // namespace detail

// Rectangular numeric CSV ('.' decimal point, ',' separator, optional single
// header row). The label column is extracted by 0-based index; binary mode maps
// {0,1} and {-1,+1} labels onto {-1,+1} and rejects anything else.
inline Dataset load_csv(const std::string& path, int label_column, bool has_header,
                        LabelMode mode = LabelMode::binary) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open csv file: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && has_header) continue;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (width == 0) {
      width = cells.size();
      if (width < 2)
        throw config_error("csv parse error at line " + std::to_string(line_no) +
                           ": need at least 2 columns");
      if (label_column < 0 || label_column >= static_cast<int>(width))
        throw config_error("label column " + std::to_string(label_column) +
                           " out of range for " + std::to_string(width) + " columns");
    } else if (cells.size() != width) {
      throw config_error("csv parse error at line " + std::to_string(line_no) + ": expected " +
                         std::to_string(width) + " fields, got " + std::to_string(cells.size()));
    }
    std::vector<double> parsed(width);
    for (std::size_t c = 0; c < width; ++c) parsed[c] = detail::parse_cell(cells[c], line_no);
    rows.push_back(std::move(parsed));
  }
  if (rows.empty()) throw config_error("csv file has no data rows: " + path);

  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(width) - 1;
  Dataset out;
  out.covariates.resize(n, d);
  out.labels.resize(n);
  const int first_data_line = has_header ? 2 : 1;
  for (int i = 0; i < n; ++i) {
    int col = 0;
    for (int c = 0; c < static_cast<int>(width); ++c) {
      if (c == label_column) continue;
      out.covariates(i, col++) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    }
    double y = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(label_column)];
    if (mode == LabelMode::binary) {
      if (y == 0.0 || y == -1.0) {
        y = -1.0;
      } else if (y == 1.0) {
        y = 1.0;
      } else {
        throw config_error("csv parse error at line " + std::to_string(first_data_line + i) +
                           ": label value " + std::to_string(y) + " not in {0,1,-1,+1}");
      }
    }
    out.labels[i] = y;
  }
  return out;
}

// Features first, label last, one header row, 17 significant digits so doubles
// round-trip exactly through load_csv.
inline void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot open output file: " + path);
  char buf[64];
  for (int j = 0; j < data.dim(); ++j) out << "x" << j << ",";
  out << "label\n";
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.covariates(i, j));
      out << buf << ",";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", data.labels[i]);
    out << buf << "\n";
  }
  if (!out) throw config_error("failed while writing " + path);
}

// T disjoint index sets covering [0, n): a seeded shuffle cut into near-equal
// contiguous slices (sizes differ by at most one).
inline std::vector<std::vector<int>> split_batches(int n, int parts, std::uint64_t seed) {
  if (parts < 1) throw config_error("split_batches: need at least one part");
  if (parts > n) throw config_error("split_batches: more parts than samples");
  return split_indices(n, parts, seed);
}

inline std::vector<std::vector<int>> split_batches(const Dataset& data, int parts,
                                                   std::uint64_t seed) {
  return split_batches(data.n(), parts, seed);
}

}  // namespace hdrobust
