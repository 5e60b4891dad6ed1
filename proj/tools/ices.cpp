// Experiment front end: train / eval / sweep / gradcheck / plot.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ices/commands.hpp"

namespace {

int env_threads() {
  const char* v = std::getenv("ICES_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n > 0 ? n : 1;
}

struct Overrides {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string variant;
};

ices::ExperimentConfig resolve_config(const Overrides& ov) {
  ices::ExperimentConfig cfg = ices::load_config(ov.config_path);
  if (ov.seed_set) cfg.seed = ov.seed;
  if (!ov.out.empty()) cfg.out_dir = ov.out;
  if (!ov.variant.empty()) cfg.trainer.variant = ov.variant;
  ices::apply_variant_overrides(cfg);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"intrinsic-exploration laboratory"};
  app.require_subcommand(1);

  Overrides ov;
  bool force = false;

  auto add_common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", ov.config_path, "experiment config file")->required();
    sub->add_option("--seed", ov.seed, "seed override")->each([&](const std::string&) {
      ov.seed_set = true;
    });
    if (with_out) sub->add_option("--out", ov.out, "output directory override");
    sub->add_option("--variant", ov.variant, "variant override");
  };

  CLI::App* train = app.add_subcommand("train", "run one experiment and write artifacts");
  add_common(train, true);
  train->add_flag("--force", force, "overwrite an existing run directory");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved checkpoint greedily");
  std::string eval_run_dir;
  add_common(eval, false);
  eval->add_option("--out", eval_run_dir, "run directory holding zeta.ckpt")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "train across hyperparameter values");
  std::string sweep_param, sweep_out;
  std::vector<double> sweep_values;
  int sweep_seeds = 3;
  add_common(sweep, false);
  sweep->add_option("--param", sweep_param, "hyperparameter to sweep")
      ->required()
      ->check(CLI::IsMember({"alpha", "beta"}));
  sweep->add_option("--values", sweep_values, "comma-separated values")
      ->required()
      ->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "seeds per value (base seed up)");
  sweep->add_option("--out", sweep_out, "sweep output directory")->required();
  sweep->add_flag("--force", force, "overwrite existing child runs");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient report");
  std::uint64_t gc_seed = 1;
  std::string gc_inject;
  gradcheck->add_option("--seed", gc_seed, "seed for the random instances");
  gradcheck->add_option("--inject-fault", gc_inject, "corrupt one component's gradient")
      ->check(CLI::IsMember({"mlp", "gru", "mixer", "elbo", "actor", "value"}));

  CLI::App* plot = app.add_subcommand("plot", "render win-rate curves to SVG");
  std::vector<std::string> plot_csvs;
  std::string plot_out = "plot.svg";
  plot->add_option("csvs", plot_csvs, "metrics.csv files")->required()->expected(-1);
  plot->add_option("--out", plot_out, "output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      const ices::ExperimentConfig cfg = resolve_config(ov);
      const ices::TrainOutcome out = ices::run_train(cfg, force, &std::cerr);
      const ices::MetricsRow last = out.rows.empty() ? ices::MetricsRow{} : out.rows.back();
      std::printf("trained %ld env steps, %ld episodes; final win rate %s -> %s\n",
                  out.env_steps, out.episodes,
                  ices::format_double(last.test_win_rate).c_str(), cfg.out_dir.c_str());
      return 0;
    }
    if (eval->parsed()) {
      const ices::ExperimentConfig cfg = resolve_config(ov);
      const ices::EvalMetrics m = ices::run_eval(cfg, eval_run_dir);
      std::printf("test_return_mean = %s\ntest_win_rate = %s\n",
                  ices::format_double(m.return_mean).c_str(),
                  ices::format_double(m.win_rate).c_str());
      return 0;
    }
    if (sweep->parsed()) {
      const ices::ExperimentConfig cfg = resolve_config(ov);
      ices::run_sweep(cfg, sweep_param, sweep_values, sweep_seeds, sweep_out, env_threads(),
                      force);
      std::printf("sweep complete -> %s\n", sweep_out.c_str());
      return 0;
    }
    if (gradcheck->parsed()) return ices::run_gradcheck(gc_seed, gc_inject, std::cout);
    if (plot->parsed()) {
      ices::run_plot(plot_csvs, plot_out);
      std::printf("plot written -> %s\n", plot_out.c_str());
      return 0;
    }
  } catch (const ices::NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
