// Command-line harness around the hdrobust library: synthetic data generation,
// single fits and repeated benchmark runs, all driven by flat key=value configs.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "hdrobust/hdrobust.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string seed_text;
  int repeats = -1;
};

void attach_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key=value config file");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set beta=0.1")
      ->take_all();
  cmd->add_option("--out", args.out, "output path");
  cmd->add_option("--seed", args.seed_text, "64-bit run seed");
  cmd->add_option("--repeats", args.repeats, "number of repeated runs");
}

hdrobust::ExperimentConfig build_config(const CommonArgs& args) {
  hdrobust::ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = hdrobust::load_config(args.config_path);
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw hdrobust::config_error("--set expects key=value, got '" + kv + "'");
    hdrobust::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!args.seed_text.empty()) hdrobust::apply_setting(cfg, "seed", args.seed_text);
  if (!args.out.empty()) cfg.out = args.out;
  if (args.repeats >= 0) cfg.repeats = args.repeats;
  return cfg;
}

int cmd_generate(const CommonArgs& args) {
  const auto cfg = build_config(args);
  if (cfg.out.empty()) throw hdrobust::config_error("generate: output path required");
  hdrobust::validate(cfg.synth);
  const hdrobust::Dataset data = hdrobust::build_dataset(cfg, cfg.seed);
  hdrobust::save_csv(data, cfg.out);
  std::cout << "wrote " << data.n() << " x " << data.dim() << " dataset ("
            << data.outliers.size() << " corrupted rows) to " << cfg.out << "\n";
  return 0;
}

int cmd_fit(const CommonArgs& args) {
  auto cfg = build_config(args);
  cfg.repeats = 1;
  hdrobust::validate_pre_run(cfg);
  const hdrobust::SingleRun single = hdrobust::run_single(cfg, cfg.seed);

  if (!cfg.out.empty()) {
    std::ofstream out(cfg.out);
    if (!out) throw hdrobust::config_error("cannot open output file: " + cfg.out);
    out << hdrobust::kMetricHeader << '\n';
    for (const hdrobust::TraceRow& tr : single.run.trace.rows) {
      hdrobust::MetricRow row;
      row.run_id = "0";
      row.setting = cfg.setting;
      row.algo = cfg.algo;
      row.stage = tr.stage;
      row.iter = tr.iter;
      row.elapsed_ms = tr.elapsed_ms;
      row.l2_error = tr.l2_error;
      row.norm_error = tr.norm_error;
      row.objective = tr.objective;
      out << hdrobust::detail::metric_row_csv(row) << '\n';
    }
  }

  const auto geom = hdrobust::geometry_from(cfg, single.data.dim());
  const auto& theta = single.run.theta_hat;
  std::cout << "algo:       " << cfg.algo << "\n"
            << "stages:     " << single.run.trace.stages.size() << "\n"
            << "iterations: "
            << (single.run.trace.rows.empty() ? 0 : single.run.trace.rows.back().iter) << "\n"
            << "sparsity:   " << geom.sparsity(theta) << " / " << geom.sparsity_capacity()
            << "\n"
            << "norm:       " << geom.norm(theta) << "\n";
  if (!single.run.trace.rows.empty())
    std::cout << "objective:  " << single.run.trace.rows.back().objective << "\n";
  if (single.data.theta_star)
    std::cout << "l2 error:   " << (theta - *single.data.theta_star).norm() << "\n";
  if (!cfg.out.empty()) std::cout << "trace:      " << cfg.out << "\n";
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  const auto cfg = build_config(args);
  hdrobust::run_experiment(cfg);
  std::cout << "wrote " << cfg.out << " and " << hdrobust::detail::aggregate_path(cfg.out)
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust high-dimensional linear learning benchmark"};
  app.require_subcommand(1);

  CommonArgs gen_args, fit_args, bench_args;
  CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset CSV");
  attach_common(gen, gen_args);
  CLI::App* fit = app.add_subcommand("fit", "run a single fit and print a summary");
  attach_common(fit, fit_args);
  CLI::App* bench = app.add_subcommand("bench", "run a repeated experiment");
  attach_common(bench, bench_args);

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_generate(gen_args);
    if (fit->parsed()) return cmd_fit(fit_args);
    if (bench->parsed()) return cmd_bench(bench_args);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const hdrobust::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hdrobust::numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
