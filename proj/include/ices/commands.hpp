#pragma once

// Subcommand implementations behind the CLI front end, kept callable from
// tests: training with artifact emission, checkpoint evaluation, hyperparam
// sweeps, the gradient-check report, and curve plotting.

#include <atomic>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ices/checkpoint.hpp"
#include "ices/config.hpp"
#include "ices/gradcheck_suite.hpp"
#include "ices/svg_plot.hpp"
#include "ices/trainer.hpp"

namespace ices {

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << content;
  if (!os) throw IoError("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TrainOutcome {
  std::vector<MetricsRow> rows;
  long env_steps = 0;
  long episodes = 0;
};

// Runs one experiment and writes metrics.csv, manifest.txt, and zeta.ckpt
// into out_dir. Refuses to overwrite an existing run unless forced. A
// numeric abort leaves a diagnostic file behind and rethrows.
inline TrainOutcome run_train(const ExperimentConfig& cfg, bool force = false,
                              std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  cfg.validate();
  const fs::path dir = cfg.out_dir;
  const fs::path metrics = dir / "metrics.csv";
  const fs::path manifest = dir / "manifest.txt";
  const fs::path ckpt = dir / "zeta.ckpt";
  if (!force && (fs::exists(metrics) || fs::exists(manifest) || fs::exists(ckpt)))
    throw ConfigError("train: " + dir.string() +
                      " already holds run artifacts; pass --force to overwrite");
  fs::create_directories(dir);

  const std::time_t started = std::time(nullptr);
  Trainer::LogFn logfn;
  if (log) logfn = [log](const std::string& m) { (*log) << m << "\n"; };
  Trainer tr(cfg.trainer, make_env_factory(cfg.env), cfg.seed, logfn);

  TrainOutcome out;
  try {
    out.rows = tr.run();
  } catch (const NumericError& e) {
    write_text_file((dir / "diagnostic.txt").string(), std::string(e.what()) + "\n");
    throw;
  }
  out.env_steps = tr.env_steps();
  out.episodes = tr.episodes_seen();

  write_text_file(metrics.string(), metrics_to_csv(out.rows));
  save_checkpoint(ckpt.string(), tr.policies().zeta());

  std::ostringstream m;
  m << "config_hash = " << config_hash(cfg) << "\n";
  m << "started_unix = " << started << "\n";
  m << "finished_unix = " << std::time(nullptr) << "\n";
  m << "env_steps = " << out.env_steps << "\n";
  m << "episodes = " << out.episodes << "\n";
  const MetricsRow last = out.rows.empty() ? MetricsRow{} : out.rows.back();
  m << "final_step = " << last.step << "\n";
  m << "final_test_return_mean = " << format_double(last.test_return_mean) << "\n";
  m << "final_test_win_rate = " << format_double(last.test_win_rate) << "\n";
  m << "[config]\n" << cfg.serialize();
  write_text_file(manifest.string(), m.str());
  return out;
}

// Greedy evaluation of a saved exploitation checkpoint under the given
// config's environment; eval_episodes and seed come from the config.
inline EvalMetrics run_eval(const ExperimentConfig& cfg, const std::string& run_dir) {
  cfg.validate();
  auto factory = make_env_factory(cfg.env);
  auto env = factory();
  TrainerConfig tc = cfg.trainer;
  tc.step_max = 0;
  Trainer shell(tc, factory, cfg.seed);
  load_checkpoint((std::filesystem::path(run_dir) / "zeta.ckpt").string(),
                  shell.policies().zeta());
  RandomStream er(cfg.seed);
  return evaluate(shell.policies(), *env, cfg.trainer.eval_episodes, er);
}

namespace cmddetail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace cmddetail

// One child run per (value, seed); value directories under out_dir, shared
// seed set base..base+n_seeds-1, then a per-value median summary CSV.
inline void run_sweep(const ExperimentConfig& base, const std::string& param,
                      const std::vector<double>& values, int n_seeds,
                      const std::string& out_dir, int threads = 1, bool force = false) {
  namespace fs = std::filesystem;
  if (param != "alpha" && param != "beta")
    throw ConfigError("sweep: param must be alpha or beta, got '" + param + "'");
  if (values.empty()) throw ConfigError("sweep: needs at least one value");
  if (n_seeds <= 0) throw ConfigError("sweep: needs at least one seed");

  struct Task {
    ExperimentConfig cfg;
    int value_index;
    int seed_index;
  };
  std::vector<Task> tasks;
  for (size_t vi = 0; vi < values.size(); ++vi) {
    const double v = values[vi];
    for (int k = 0; k < n_seeds; ++k) {
      ExperimentConfig c = base;
      if (param == "alpha") {
        c.trainer.alpha_start = v;  // a sweep point holds alpha constant
        c.trainer.alpha_end = v;
      } else {
        c.trainer.policy.beta = v;
      }
      c.seed = base.seed + (std::uint64_t)k;
      c.out_dir = (fs::path(out_dir) / (param + "_" + cfgdetail::exact_double(v)) /
                   ("seed_" + std::to_string(c.seed)))
                      .string();
      apply_variant_overrides(c);
      tasks.push_back({std::move(c), (int)vi, k});
    }
  }

  std::vector<MetricsRow> finals(tasks.size());
  const int width = std::max(1, std::min<int>(threads, (int)tasks.size()));
  std::atomic<size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto work = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        const TrainOutcome o = run_train(tasks[i].cfg, force);
        if (!o.rows.empty()) finals[i] = o.rows.back();
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  if (width == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < width; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);

  std::ostringstream sum;
  sum << "param,value,seeds,median_test_win_rate,median_test_return_mean\n";
  for (size_t vi = 0; vi < values.size(); ++vi) {
    std::vector<double> wins, rets;
    for (size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i].value_index == (int)vi) {
        wins.push_back(finals[i].test_win_rate);
        rets.push_back(finals[i].test_return_mean);
      }
    sum << param << "," << cfgdetail::exact_double(values[vi]) << "," << n_seeds << ","
        << format_double(cmddetail::median_of(wins)) << ","
        << format_double(cmddetail::median_of(rets)) << "\n";
  }
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "summary.csv").string(), sum.str());
}

// Prints one line per component with its max relative error; exit 0 iff all
// components are within tolerance.
inline int run_gradcheck(std::uint64_t seed, const std::string& inject, std::ostream& out) {
  const auto results = run_gradcheck_suite(seed, inject);
  bool all_ok = true;
  std::string offenders;
  for (const auto& r : results) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-6s max_rel_err %.3e over %d coords  %s\n",
                  r.component.c_str(), r.rep.max_rel_err, r.rep.coords_checked,
                  r.rep.pass ? "ok" : "FAIL");
    out << buf;
    if (!r.rep.pass) {
      all_ok = false;
      if (!offenders.empty()) offenders += ", ";
      offenders += r.component;
    }
  }
  if (all_ok) {
    out << "gradcheck: all components within 1e-4\n";
    return 0;
  }
  out << "gradcheck: tolerance exceeded in " << offenders << "\n";
  return 2;
}

// Renders win-rate curves for one or more metrics files into a single SVG;
// several inputs get a pointwise-median overlay.
inline void run_plot(const std::vector<std::string>& csv_paths, const std::string& out_path) {
  namespace fs = std::filesystem;
  if (csv_paths.empty()) throw ConfigError("plot: needs at least one metrics file");
  std::vector<MetricsSeries> series;
  for (const auto& p : csv_paths) {
    try {
      series.push_back(parse_metrics_series(read_text_file(p), fs::path(p).stem().string()));
    } catch (const ConfigError& e) {
      throw ConfigError(p + ": " + e.what());
    }
  }
  if (series.size() > 1) series.push_back(median_series(series));
  write_text_file(out_path, render_win_rate_svg(series));
}

}  // namespace ices
