#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "hdrobust/datagen.hpp"
#include "hdrobust/errors.hpp"
#include "hdrobust/estimators.hpp"
#include "hdrobust/geometry.hpp"
#include "hdrobust/model.hpp"
#include "hdrobust/rng.hpp"
#include "hdrobust/solvers.hpp"

namespace hdrobust {

// One line of the metrics CSV. The schema is fixed: run_id, setting, algo,
// stage, iter, elapsed_ms, l2_error, norm_error, objective. Error columns stay
// empty when the true parameter is unknown.
struct MetricRow {
  std::string run_id;
  std::string setting;
  std::string algo;
  int stage = 0;
  long iter = 0;
  double elapsed_ms = 0.0;
  std::optional<double> l2_error;
  std::optional<double> norm_error;
  double objective = 0.0;
};

inline MetricRow metrics(const Eigen::VectorXd& theta,
                         const std::optional<Eigen::VectorXd>& truth, const Problem& pb,
                         double alpha_obj) {
  MetricRow row;
  if (truth) {
    const Eigen::VectorXd diff = theta - *truth;
    row.l2_error = diff.norm();
    row.norm_error = pb.geometry.norm(diff);
  }
  row.objective = robust_objective_estimate(pb, theta, alpha_obj);
  return row;
}

// Flat key=value experiment description; every key can also be overridden on
// the command line. Unknown keys are rejected.
struct ExperimentConfig {
  // data source
  std::string data = "synth";  // synth | csv
  SynthConfig synth;
  std::string csv_path;
  int label_column = -1;
  bool csv_has_header = false;
  bool csv_numeric_labels = false;

  // geometry
  std::string geometry = "vanilla";  // vanilla | group | lowrank
  int group_cols = 1;
  int lowrank_rows = 0;
  int lowrank_cols = 0;

  // corruption
  double eta = 0.0;
  std::string corrupt_mode = "large_magnitude";
  double corrupt_factor = 1e3;

  // model
  std::string loss = "least_squares";
  double huber_delta = 1.35;

  // algorithm + estimator
  std::string algo = "ammd";  // ammd | amda
  std::string estimator = "trimmed_mean";
  double alpha = 0.25;
  int mom_blocks = 10;
  double cm_chi = 0.0;
  double cm_v_guess = 0.0;

  SolverSchedule schedule;

  // run control
  int repeats = 1;
  std::uint64_t seed = 0;
  std::string out;
  std::string setting = "default";
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  const auto last = s.find_last_not_of(" \t");
  return first == std::string::npos ? std::string() : s.substr(first, last - first + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw config_error("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline long parse_long(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(x);
  } catch (const std::exception&) {
    throw config_error("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

}  // namespace detail

// Applies one key=value pair onto the config.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_long;
  using detail::parse_u64;

  if (key == "data") {
    if (value != "synth" && value != "csv")
      throw config_error("config: data must be 'synth' or 'csv'");
    cfg.data = value;
  } else if (key == "n") {
    cfg.synth.n = static_cast<int>(parse_long(value, key));
  } else if (key == "d") {
    cfg.synth.d = static_cast<int>(parse_long(value, key));
  } else if (key == "s") {
    cfg.synth.s = static_cast<int>(parse_long(value, key));
  } else if (key == "cov_low") {
    cfg.synth.cov_low = parse_double(value, key);
  } else if (key == "cov_high") {
    cfg.synth.cov_high = parse_double(value, key);
  } else if (key == "covariates") {
    if (value == "gaussian") cfg.synth.covariates = CovariateDist::gaussian;
    else if (value == "student") cfg.synth.covariates = CovariateDist::student;
    else throw config_error("config: covariates must be 'gaussian' or 'student'");
  } else if (key == "student_dof") {
    cfg.synth.student_dof = parse_double(value, key);
  } else if (key == "noise") {
    if (value == "pareto") cfg.synth.noise = NoiseDist::pareto;
    else if (value == "gaussian") cfg.synth.noise = NoiseDist::gaussian;
    else throw config_error("config: noise must be 'pareto' or 'gaussian'");
  } else if (key == "pareto_shape") {
    cfg.synth.pareto_shape = parse_double(value, key);
  } else if (key == "noise_sigma") {
    cfg.synth.noise_sigma = parse_double(value, key);
  } else if (key == "task") {
    if (value == "regression") cfg.synth.task = TaskKind::regression;
    else if (value == "classification") cfg.synth.task = TaskKind::logistic_classification;
    else throw config_error("config: task must be 'regression' or 'classification'");
  } else if (key == "theta_magnitude") {
    cfg.synth.theta_magnitude = parse_double(value, key);
  } else if (key == "csv_path") {
    cfg.csv_path = value;
  } else if (key == "label_column") {
    cfg.label_column = static_cast<int>(parse_long(value, key));
  } else if (key == "csv_has_header") {
    cfg.csv_has_header = parse_bool(value, key);
  } else if (key == "csv_numeric_labels") {
    cfg.csv_numeric_labels = parse_bool(value, key);
  } else if (key == "geometry") {
    if (value != "vanilla" && value != "group" && value != "lowrank")
      throw config_error("config: geometry must be vanilla, group or lowrank");
    cfg.geometry = value;
  } else if (key == "group_cols") {
    cfg.group_cols = static_cast<int>(parse_long(value, key));
  } else if (key == "lowrank_rows") {
    cfg.lowrank_rows = static_cast<int>(parse_long(value, key));
  } else if (key == "lowrank_cols") {
    cfg.lowrank_cols = static_cast<int>(parse_long(value, key));
  } else if (key == "eta") {
    cfg.eta = parse_double(value, key);
  } else if (key == "corrupt_mode") {
    if (value != "large_magnitude" && value != "adversarial_response" &&
        value != "label_flip_scale")
      throw config_error("config: unknown corruption mode '" + value + "'");
    cfg.corrupt_mode = value;
  } else if (key == "corrupt_factor") {
    cfg.corrupt_factor = parse_double(value, key);
  } else if (key == "loss") {
    if (value != "least_squares" && value != "logistic" && value != "huber" &&
        value != "hinge" && value != "absolute")
      throw config_error("config: unknown loss '" + value + "'");
    cfg.loss = value;
  } else if (key == "huber_delta") {
    cfg.huber_delta = parse_double(value, key);
  } else if (key == "algo") {
    if (value != "ammd" && value != "amda")
      throw config_error("config: algo must be 'ammd' or 'amda'");
    cfg.algo = value;
  } else if (key == "estimator") {
    if (value != "mean" && value != "trimmed_mean" && value != "coord_mom" &&
        value != "group_geometric_mom" && value != "cm_mom")
      throw config_error("config: unknown estimator '" + value + "'");
    cfg.estimator = value;
  } else if (key == "alpha") {
    cfg.alpha = parse_double(value, key);
  } else if (key == "mom_blocks") {
    cfg.mom_blocks = static_cast<int>(parse_long(value, key));
  } else if (key == "cm_chi") {
    cfg.cm_chi = parse_double(value, key);
  } else if (key == "cm_v_guess") {
    cfg.cm_v_guess = parse_double(value, key);
  } else if (key == "mode") {
    if (value == "practical") cfg.schedule.mode = ScheduleMode::practical;
    else if (value == "theoretical") cfg.schedule.mode = ScheduleMode::theoretical;
    else throw config_error("config: mode must be 'practical' or 'theoretical'");
  } else if (key == "r0") {
    cfg.schedule.r0 = parse_double(value, key);
  } else if (key == "beta") {
    cfg.schedule.beta = parse_double(value, key);
  } else if (key == "da_step") {
    cfg.schedule.da_step = parse_double(value, key);
  } else if (key == "sbar") {
    cfg.schedule.sbar = static_cast<int>(parse_long(value, key));
  } else if (key == "stages") {
    cfg.schedule.stages = static_cast<int>(parse_long(value, key));
  } else if (key == "stage_length") {
    cfg.schedule.stage_length = static_cast<int>(parse_long(value, key));
  } else if (key == "max_iters") {
    cfg.schedule.max_iters = parse_long(value, key);
  } else if (key == "eps_bar") {
    cfg.schedule.eps_bar = parse_double(value, key);
  } else if (key == "kappa") {
    cfg.schedule.kappa = parse_double(value, key);
  } else if (key == "lambda_growth") {
    cfg.schedule.lambda_growth = parse_double(value, key);
  } else if (key == "nu") {
    cfg.schedule.nu = parse_double(value, key);
  } else if (key == "lipschitz_m") {
    cfg.schedule.lipschitz_m = parse_double(value, key);
  } else if (key == "use_plateau") {
    cfg.schedule.use_plateau = parse_bool(value, key);
  } else if (key == "plateau_window") {
    cfg.schedule.plateau.window = static_cast<int>(parse_long(value, key));
  } else if (key == "plateau_rel_tol") {
    cfg.schedule.plateau.rel_tol = parse_double(value, key);
  } else if (key == "validation_fraction") {
    cfg.schedule.plateau.validation_fraction = parse_double(value, key);
  } else if (key == "alpha_obj") {
    cfg.schedule.plateau.alpha_obj = parse_double(value, key);
  } else if (key == "data_splitting") {
    cfg.schedule.data_splitting = parse_bool(value, key);
  } else if (key == "holdout_validation") {
    cfg.schedule.holdout_validation = parse_bool(value, key);
  } else if (key == "record_every") {
    cfg.schedule.record_every = static_cast<int>(parse_long(value, key));
  } else if (key == "repeats") {
    cfg.repeats = static_cast<int>(parse_long(value, key));
  } else if (key == "seed") {
    cfg.seed = parse_u64(value, key);
  } else if (key == "out") {
    cfg.out = value;
  } else if (key == "setting") {
    cfg.setting = value;
  } else {
    throw config_error("config: unknown key '" + key + "'");
  }
}

// Reads a flat key=value file. '#' starts a comment, blank lines are skipped.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config parse error at line " + std::to_string(line_no) +
                         ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw config_error("config parse error at line " + std::to_string(line_no));
    apply_setting(cfg, key, value);
  }
  return cfg;
}

inline EstimatorSpec estimator_spec_from(const ExperimentConfig& cfg) {
  EstimatorSpec spec;
  if (cfg.estimator == "mean") spec.kind = EstimatorSpec::Kind::mean;
  else if (cfg.estimator == "trimmed_mean") spec.kind = EstimatorSpec::Kind::trimmed_mean;
  else if (cfg.estimator == "coord_mom") spec.kind = EstimatorSpec::Kind::coord_mom;
  else if (cfg.estimator == "group_geometric_mom")
    spec.kind = EstimatorSpec::Kind::group_geometric_mom;
  else if (cfg.estimator == "cm_mom") spec.kind = EstimatorSpec::Kind::cm_mom;
  else throw config_error("config: unknown estimator '" + cfg.estimator + "'");
  spec.alpha = cfg.alpha;
  spec.blocks = cfg.mom_blocks;
  spec.chi = cfg.cm_chi;
  spec.v_guess = cfg.cm_v_guess;
  return spec;
}

inline LossModel loss_model_from(const ExperimentConfig& cfg) {
  if (cfg.loss == "least_squares") return LossModel::least_squares();
  if (cfg.loss == "logistic") return LossModel::logistic();
  if (cfg.loss == "huber") return LossModel::huber(cfg.huber_delta);
  if (cfg.loss == "hinge") return LossModel::hinge();
  if (cfg.loss == "absolute") return LossModel::absolute();
  throw config_error("config: unknown loss '" + cfg.loss + "'");
}

inline Geometry geometry_from(const ExperimentConfig& cfg, int d) {
  if (cfg.geometry == "vanilla") return Geometry::vanilla(d);
  if (cfg.geometry == "group") {
    if (cfg.group_cols < 1 || d % cfg.group_cols != 0)
      throw config_error("config: group_cols must divide the feature dimension");
    return Geometry::group(d / cfg.group_cols, cfg.group_cols);
  }
  if (cfg.lowrank_rows * cfg.lowrank_cols != d)
    throw config_error("config: lowrank_rows * lowrank_cols must equal the feature dimension");
  return Geometry::lowrank(cfg.lowrank_rows, cfg.lowrank_cols);
}

namespace detail {

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string metric_row_csv(const MetricRow& r) {
  std::ostringstream os;
  os << r.run_id << ',' << r.setting << ',' << r.algo << ',' << r.stage << ',' << r.iter << ',';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", r.elapsed_ms);
  os << buf << ',';
  os << (r.l2_error ? format_metric(*r.l2_error) : std::string()) << ',';
  os << (r.norm_error ? format_metric(*r.norm_error) : std::string()) << ',';
  os << format_metric(r.objective);
  return os.str();
}

inline std::string aggregate_path(const std::string& out) {
  const std::string suffix = ".csv";
  if (out.size() > suffix.size() &&
      out.compare(out.size() - suffix.size(), suffix.size(), suffix) == 0)
    return out.substr(0, out.size() - suffix.size()) + ".agg.csv";
  return out + ".agg.csv";
}

}  // namespace detail

inline constexpr const char* kMetricHeader =
    "run_id,setting,algo,stage,iter,elapsed_ms,l2_error,norm_error,objective";

// Validates what is checkable before touching any data.
inline void validate_pre_run(const ExperimentConfig& cfg) {
  if (cfg.repeats < 1) throw config_error("config: repeats must be >= 1");
  if (cfg.data == "synth") {
    validate(cfg.synth);
  } else {
    if (cfg.csv_path.empty()) throw config_error("config: csv data needs csv_path");
    if (cfg.label_column < 0) throw config_error("config: csv data needs label_column");
  }
  if (!(cfg.eta >= 0.0 && cfg.eta < 0.5)) throw config_error("config: eta must lie in [0, 1/2)");
  loss_model_from(cfg);
  estimator_spec_from(cfg);
}

// Builds the dataset for one repeat: synthetic generation (or a csv copy) plus
// the configured corruption.
inline Dataset build_dataset(const ExperimentConfig& cfg, std::uint64_t rep_seed,
                             const Dataset* csv_base = nullptr) {
  Dataset data;
  if (cfg.data == "synth") {
    data = generate(cfg.synth, rep_seed);
  } else if (csv_base != nullptr) {
    data = *csv_base;
  } else {
    data = load_csv(cfg.csv_path, cfg.label_column, cfg.csv_has_header,
                    cfg.csv_numeric_labels ? LabelMode::numeric : LabelMode::binary);
  }
  if (cfg.eta > 0.0) {
    CorruptionMode mode = CorruptionMode::large_magnitude;
    if (cfg.corrupt_mode == "adversarial_response") mode = CorruptionMode::adversarial_response;
    else if (cfg.corrupt_mode == "label_flip_scale") mode = CorruptionMode::label_flip_scale;
    data = corrupt(data, cfg.eta, mode, cfg.corrupt_factor, derive_seed(rep_seed, 21));
  }
  return data;
}

struct SingleRun {
  Dataset data;
  SolverRun run;
};

// One configured solver run with the given seed.
inline SingleRun run_single(const ExperimentConfig& cfg, std::uint64_t rep_seed,
                            const Dataset* csv_base = nullptr) {
  SingleRun result;
  result.data = build_dataset(cfg, rep_seed, csv_base);
  const Geometry geom = geometry_from(cfg, result.data.dim());
  detail::validate_schedule(cfg.schedule, geom);
  hdrobust::validate(estimator_spec_from(cfg), result.data.n());
  const Problem pb(loss_model_from(cfg), result.data, geom);
  const GradientEstimator est =
      make_gradient_estimator(estimator_spec_from(cfg), geom, derive_seed(rep_seed, 22));
  result.run = (cfg.algo == "ammd") ? ammd(pb, est, cfg.schedule, rep_seed)
                                    : amda(pb, est, cfg.schedule, rep_seed);
  return result;
}

// Runs `repeats` solver runs with seeds seed, seed+1, ... and writes the detail
// rows (one per recorded iteration per run, flushed in repeat order) plus an
// aggregate file of per-iteration means across repeats. A runtime numerical
// failure flushes a FAILED sentinel row and rethrows.
inline void run_experiment(const ExperimentConfig& cfg) {
  validate_pre_run(cfg);
  if (cfg.out.empty()) throw config_error("config: output path required");

  std::ofstream out(cfg.out);
  if (!out) throw config_error("cannot open output file: " + cfg.out);
  out << kMetricHeader << '\n';

  std::optional<Dataset> csv_base;
  if (cfg.data == "csv")
    csv_base = load_csv(cfg.csv_path, cfg.label_column, cfg.csv_has_header,
                        cfg.csv_numeric_labels ? LabelMode::numeric : LabelMode::binary);

  std::vector<MetricRow> all_rows;
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    const std::uint64_t rep_seed = cfg.seed + static_cast<std::uint64_t>(rep);
    try {
      const SingleRun single = run_single(cfg, rep_seed, csv_base ? &*csv_base : nullptr);
      for (const TraceRow& tr : single.run.trace.rows) {
        MetricRow row;
        row.run_id = std::to_string(rep);
        row.setting = cfg.setting;
        row.algo = cfg.algo;
        row.stage = tr.stage;
        row.iter = tr.iter;
        row.elapsed_ms = tr.elapsed_ms;
        row.l2_error = tr.l2_error;
        row.norm_error = tr.norm_error;
        row.objective = tr.objective;
        out << detail::metric_row_csv(row) << '\n';
        all_rows.push_back(std::move(row));
      }
      out.flush();
    } catch (const numerical_error&) {
      MetricRow sentinel;
      sentinel.run_id = std::to_string(rep);
      sentinel.setting = "FAILED";
      sentinel.algo = cfg.algo;
      sentinel.stage = -1;
      sentinel.iter = -1;
      out << detail::metric_row_csv(sentinel) << '\n';
      out.flush();
      throw;
    }
  }

  // Per-iteration means across repeats, keyed by (setting, algo, stage, iter).
  struct Bucket {
    long count = 0;
    double elapsed = 0.0, objective = 0.0;
    long l2_count = 0;
    double l2 = 0.0, norm = 0.0;
  };
  std::vector<std::pair<std::tuple<std::string, std::string, int, long>, Bucket>> buckets;
  std::map<std::tuple<std::string, std::string, int, long>, std::size_t> index;
  for (const MetricRow& r : all_rows) {
    const auto key = std::make_tuple(r.setting, r.algo, r.stage, r.iter);
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, buckets.size());
      buckets.emplace_back(key, Bucket{});
      it = index.find(key);
    }
    Bucket& b = buckets[it->second].second;
    ++b.count;
    b.elapsed += r.elapsed_ms;
    b.objective += r.objective;
    if (r.l2_error) {
      ++b.l2_count;
      b.l2 += *r.l2_error;
      b.norm += *r.norm_error;
    }
  }

  std::ofstream agg(detail::aggregate_path(cfg.out));
  if (!agg) throw config_error("cannot open aggregate output file");
  agg << kMetricHeader << '\n';
  for (const auto& [key, b] : buckets) {
    MetricRow row;
    row.run_id = "mean";
    row.setting = std::get<0>(key);
    row.algo = std::get<1>(key);
    row.stage = std::get<2>(key);
    row.iter = std::get<3>(key);
    row.elapsed_ms = b.elapsed / static_cast<double>(b.count);
    row.objective = b.objective / static_cast<double>(b.count);
    if (b.l2_count > 0) {
      row.l2_error = b.l2 / static_cast<double>(b.l2_count);
      row.norm_error = b.norm / static_cast<double>(b.l2_count);
    }
    agg << detail::metric_row_csv(row) << '\n';
  }
}

}  // namespace hdrobust
