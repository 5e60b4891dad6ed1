#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "ices/commands.hpp"

using namespace ices;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

const char* kSmokeConfig = R"(
[env]
name = matrix_game
[algo]
hidden = 8
mix_embed = 4
hyper_hidden = 8
scaffold_hidden = 12
embed_dim = 3
latent_dim = 4
batch_size = 4
buffer_capacity = 100
train_interval = 50
target_update_interval = 200
eval_interval = 250
eval_episodes = 5
epsilon_anneal_steps = 400
[run]
variant = ices
seed = 4
step_max = 300
)";

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ices_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config defaults mirror the reference hyperparameters") {
  const ExperimentConfig c = parse_config("[env]\nname = matrix_game\n");
  CHECK(c.trainer.scaffold.embed_dim == 4);
  CHECK(c.trainer.scaffold.lr == 1e-4);
  CHECK(c.trainer.scaffold.grad_clip == 0.1);
  CHECK(c.trainer.scaffold.latent_dim == 8);
  CHECK(c.trainer.policy.beta == 0.1);
  CHECK(c.trainer.policy.gamma == 0.99);
  CHECK(c.trainer.alpha_start == 0.1);
  CHECK(c.trainer.alpha_end == 0.05);
  CHECK(c.trainer.batch_size == 32);
  CHECK(c.trainer.buffer_capacity == 5000);
  CHECK(c.trainer.train_interval == 100);
  CHECK(c.trainer.eval_interval == 2000);
  CHECK(c.trainer.eval_episodes == 20);
  CHECK(c.trainer.variant == "ices");
  CHECK(c.seed == 1);
}

TEST_CASE("config parse and serialize round-trip exactly") {
  const std::string text = std::string(kSmokeConfig) +
                           "[algo]\nalpha_start = 0.0733333333333334\ngamma = 0.97\n";
  const ExperimentConfig a = parse_config(text);
  const std::string s1 = a.serialize();
  const ExperimentConfig b = parse_config(s1);
  CHECK(b.serialize() == s1);
  CHECK(b.trainer.alpha_start == a.trainer.alpha_start);
  CHECK(b.trainer.policy.gamma == a.trainer.policy.gamma);
}

TEST_CASE("config rejects unknown and malformed input") {
  CHECK_THROWS_MATCHES(parse_config("[env]\nname = matrix_game\nfoo = 1\n"), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("env.foo")));
  CHECK_THROWS_MATCHES(parse_config("[algo]\nhid = 3\n"), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("line 2")));
  CHECK_THROWS_MATCHES(parse_config("[misc]\nx = 1\n"), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("unknown section")));
  CHECK_THROWS_MATCHES(parse_config("name = matrix_game\n"), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("outside any section")));
  CHECK_THROWS_MATCHES(parse_config("[env]\nname = matrix_game\n[algo]\nhidden = abc\n"),
                       ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("algo.hidden")));
  CHECK_THROWS_MATCHES(parse_config("[env]\nepisode_limit = 5\n"), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("env.name")));
  CHECK_THROWS_MATCHES(parse_config("[env]\nname = pong\n"), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("pong")));
}

TEST_CASE("config range validation names the key") {
  CHECK_THROWS_MATCHES(
      parse_config("[env]\nname = matrix_game\n[algo]\nalpha_start = 1.5\nalpha_end = 1.5\n"),
      ConfigError, Catch::Matchers::MessageMatches(ContainsSubstring("alpha_start")));
  CHECK_THROWS_MATCHES(parse_config("[env]\nname = matrix_game\n[algo]\ngamma = 0\n"),
                       ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("gamma")));
  CHECK_THROWS_MATCHES(parse_config("[env]\nname = matrix_game\n[algo]\ngamma = 1.01\n"),
                       ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("gamma")));
  CHECK_THROWS_MATCHES(parse_config("[env]\nname = matrix_game\n[algo]\nbeta = -0.5\n"),
                       ConfigError, Catch::Matchers::MessageMatches(ContainsSubstring("beta")));
  CHECK_THROWS_MATCHES(
      parse_config("[env]\nname = matrix_game\n[algo]\nliteral_advantage = yes\n"), ConfigError,
      Catch::Matchers::MessageMatches(ContainsSubstring("literal_advantage")));
}

TEST_CASE("variant overrides are resolved at parse time") {
  const ExperimentConfig a =
      parse_config("[env]\nname = matrix_game\n[run]\nvariant = no_maxent\n");
  CHECK(a.trainer.policy.beta == 0.0);
  const ExperimentConfig b =
      parse_config("[env]\nname = matrix_game\n[run]\nvariant = int_ext\n");
  CHECK(b.trainer.alpha_start == 0.0);
  CHECK(b.trainer.alpha_end == 0.0);
  const ExperimentConfig c =
      parse_config("[env]\nname = matrix_game\n[run]\nvariant = qmix_baseline\n");
  CHECK(c.trainer.alpha_start == 0.0);
  CHECK_THROWS_MATCHES(parse_config("[env]\nname = matrix_game\n[run]\nvariant = vdn\n"),
                       ConfigError, Catch::Matchers::MessageMatches(ContainsSubstring("vdn")));
}

TEST_CASE("corridor layout generator matches the default grid") {
  const auto rows = make_corridor_layout(8, 4, 3);
  CHECK(rows == NoisyCorridorConfig{}.layout);
  const auto small = make_corridor_layout(5, 3, 2);
  CHECK(small == std::vector<std::string>{"0..N.", "...NG", "1...."});
  CHECK_THROWS_AS(make_corridor_layout(2, 2, 0), ConfigError);
  CHECK_THROWS_AS(make_corridor_layout(8, 4, 5), ConfigError);
}

TEST_CASE("checkpoint round-trips parameter values") {
  const fs::path dir = fresh_dir("ckpt");
  fs::create_directories(dir);
  const std::string path = (dir / "a.ckpt").string();

  ParamStore a, b;
  RandomStream r1(5), r2(6);
  Mlp ma(a, "net", {3, 4, 2}, Activation::Tanh, r1);
  Mlp mb(b, "net", {3, 4, 2}, Activation::Tanh, r2);
  REQUIRE(a.value_hash() != b.value_hash());
  save_checkpoint(path, a);
  load_checkpoint(path, b);
  CHECK(a.value_hash() == b.value_hash());

  SECTION("shape mismatch is rejected") {
    ParamStore c;
    RandomStream r3(7);
    Mlp mc(c, "net", {3, 5, 2}, Activation::Tanh, r3);
    CHECK_THROWS_AS(load_checkpoint(path, c), ConfigError);
  }
  SECTION("name mismatch is rejected") {
    ParamStore c;
    RandomStream r3(7);
    Mlp mc(c, "other", {3, 4, 2}, Activation::Tanh, r3);
    CHECK_THROWS_AS(load_checkpoint(path, c), ConfigError);
  }
  SECTION("bad magic is rejected") {
    const std::string junk = (dir / "junk.ckpt").string();
    write_text_file(junk, "definitely not a checkpoint");
    CHECK_THROWS_AS(load_checkpoint(junk, b), ConfigError);
  }
  SECTION("truncated file is rejected") {
    const std::string cut = (dir / "cut.ckpt").string();
    const std::string full = read_text_file(path);
    write_text_file(cut, full.substr(0, full.size() / 2));
    CHECK_THROWS(load_checkpoint(cut, b));
  }
  SECTION("missing file is an io error") {
    CHECK_THROWS_AS(load_checkpoint((dir / "nope.ckpt").string(), b), IoError);
  }
}

TEST_CASE("metrics series parsing") {
  const std::string good = "step,episodes,test_return_mean,test_win_rate\n100,3,0.5,0.25\n"
                           "200,6,0.75,0.5\n";
  const MetricsSeries s = parse_metrics_series(good, "run");
  CHECK(s.steps == std::vector<long>{100, 200});
  CHECK(s.win_rate == std::vector<double>{0.25, 0.5});

  CHECK_THROWS_MATCHES(parse_metrics_series("step,foo\n1,2\n", "x"), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("test_win_rate")));
  CHECK_THROWS_MATCHES(parse_metrics_series("foo,test_win_rate\n1,2\n", "x"), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("step")));
  CHECK_THROWS_MATCHES(
      parse_metrics_series("step,test_win_rate\n1,0.5\n2\n", "x"), ConfigError,
      Catch::Matchers::MessageMatches(ContainsSubstring("line 3")));
  CHECK_THROWS_MATCHES(
      parse_metrics_series("step,test_win_rate\nten,0.5\n", "x"), ConfigError,
      Catch::Matchers::MessageMatches(ContainsSubstring("line 2")));
}

TEST_CASE("median series uses steps common to every input") {
  MetricsSeries a{"a", {100, 200, 300}, {0.1, 0.2, 0.3}};
  MetricsSeries b{"b", {100, 200, 300}, {0.3, 0.6, 0.5}};
  MetricsSeries c{"c", {100, 200}, {0.2, 0.4}};
  const MetricsSeries m = median_series({a, b, c});
  CHECK(m.label == "median");
  CHECK(m.steps == std::vector<long>{100, 200});
  CHECK(m.win_rate == std::vector<double>{0.2, 0.4});

  const MetricsSeries m2 = median_series({a, b});
  CHECK(m2.steps == std::vector<long>{100, 200, 300});
  CHECK(m2.win_rate[0] == Catch::Approx(0.2));
  CHECK(m2.win_rate[2] == Catch::Approx(0.4));
}

TEST_CASE("svg rendering includes every series and a legend") {
  MetricsSeries a{"seed<1>", {0, 100}, {0.0, 0.5}};
  MetricsSeries b{"seed2", {0, 100}, {0.25, 0.75}};
  const std::string svg = render_win_rate_svg({a, b, median_series({a, b})});
  CHECK(svg.find("<svg") != std::string::npos);
  size_t count = 0, pos = 0;
  while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
    ++count;
    pos += 1;
  }
  CHECK(count == 3);
  CHECK(svg.find("seed&lt;1&gt;") != std::string::npos);
  CHECK(svg.find("median") != std::string::npos);
  CHECK(svg.find("test_win_rate") != std::string::npos);
}

TEST_CASE("gradcheck suite passes and reports injected faults") {
  std::ostringstream out;
  CHECK(run_gradcheck(1, "", out) == 0);
  CHECK_THAT(out.str(), ContainsSubstring("all components within"));
  for (const char* comp : {"mlp", "gru", "mixer", "elbo", "actor", "value"})
    CHECK_THAT(out.str(), ContainsSubstring(comp));

  std::ostringstream bad;
  CHECK(run_gradcheck(1, "elbo", bad) == 2);
  CHECK_THAT(bad.str(), ContainsSubstring("tolerance exceeded in elbo"));
}

TEST_CASE("train command writes exactly the three run artifacts") {
  const fs::path dir = fresh_dir("train");
  ExperimentConfig cfg = parse_config(kSmokeConfig);
  cfg.out_dir = (dir / "run").string();
  const TrainOutcome out = run_train(cfg);
  CHECK(out.env_steps >= 300);
  CHECK(!out.rows.empty());

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir / "run"))
    names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  CHECK(names == std::vector<std::string>{"manifest.txt", "metrics.csv", "zeta.ckpt"});

  const std::string manifest = read_text_file((dir / "run" / "manifest.txt").string());
  CHECK_THAT(manifest, ContainsSubstring("config_hash = " + config_hash(cfg)));
  CHECK_THAT(manifest, ContainsSubstring("[config]"));

  SECTION("collision without force refuses, force overwrites") {
    CHECK_THROWS_MATCHES(run_train(cfg), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("--force")));
    CHECK_NOTHROW(run_train(cfg, true));
  }
  SECTION("same seed reproduces metrics byte for byte") {
    ExperimentConfig cfg2 = cfg;
    cfg2.out_dir = (dir / "run_b").string();
    run_train(cfg2);
    CHECK(read_text_file((dir / "run" / "metrics.csv").string()) ==
          read_text_file((dir / "run_b" / "metrics.csv").string()));
  }
  SECTION("eval command reads the checkpoint back") {
    const EvalMetrics m = run_eval(cfg, cfg.out_dir);
    CHECK(m.win_rate >= 0.0);
    CHECK(m.win_rate <= 1.0);
    CHECK_THROWS_AS(run_eval(cfg, (dir / "nowhere").string()), IoError);
  }
}

TEST_CASE("sweep builds per-value children and a summary") {
  const fs::path dir = fresh_dir("sweep");
  ExperimentConfig cfg = parse_config(kSmokeConfig);
  cfg.trainer.step_max = 250;
  run_sweep(cfg, "beta", {0.0, 0.1}, 2, dir.string(), 2);

  CHECK(fs::exists(dir / "beta_0" / "seed_4" / "metrics.csv"));
  CHECK(fs::exists(dir / "beta_0" / "seed_5" / "metrics.csv"));
  CHECK(fs::exists(dir / "beta_0.1" / "seed_4" / "metrics.csv"));
  const std::string summary = read_text_file((dir / "summary.csv").string());
  CHECK_THAT(summary,
             ContainsSubstring("param,value,seeds,median_test_win_rate,median_test_return_mean"));
  CHECK_THAT(summary, ContainsSubstring("beta,0,2,"));
  CHECK_THAT(summary, ContainsSubstring("beta,0.1,2,"));

  CHECK_THROWS_AS(run_sweep(cfg, "gamma", {0.5}, 1, dir.string(), 1), ConfigError);
  CHECK_THROWS_AS(run_sweep(cfg, "alpha", {}, 1, dir.string(), 1), ConfigError);
}

TEST_CASE("plot command renders files and reports bad input") {
  const fs::path dir = fresh_dir("plot");
  fs::create_directories(dir);
  write_text_file((dir / "a.csv").string(),
                  "step,test_win_rate\n0,0\n100,0.5\n200,0.75\n");
  write_text_file((dir / "b.csv").string(), "step,test_win_rate\n0,0.1\n100,0.4\n200,0.9\n");
  const std::string out = (dir / "curves.svg").string();
  run_plot({(dir / "a.csv").string(), (dir / "b.csv").string()}, out);
  const std::string svg = read_text_file(out);
  CHECK_THAT(svg, ContainsSubstring("median"));

  write_text_file((dir / "bad.csv").string(), "step,test_win_rate\n0,0\nbroken\n");
  CHECK_THROWS_MATCHES(run_plot({(dir / "bad.csv").string()}, out), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("bad.csv")));
  CHECK_THROWS_MATCHES(run_plot({(dir / "bad.csv").string()}, out), ConfigError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("line 3")));
}
