#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "ices/matrix_game.hpp"
#include "ices/noisy_corridor.hpp"
#include "ices/trainer.hpp"

using namespace ices;

namespace {

Trainer::EnvFactory matrix_factory() {
  return [] { return std::make_unique<CooperativeMatrixGame>(shipped_matrix_game()); };
}

Trainer::EnvFactory corridor_factory() {
  NoisyCorridorConfig c;
  c.layout = {"0...N", "....G", "1...N"};
  c.episode_limit = 20;
  return [c] { return std::make_unique<NoisyCorridor>(c); };
}

TrainerConfig fast_cfg(const std::string& variant = "ices") {
  TrainerConfig c;
  c.variant = variant;
  c.step_max = 400;
  c.batch_size = 4;
  c.buffer_capacity = 50;
  c.train_interval = 25;
  c.target_update_interval = 100;
  c.eval_interval = 100;
  c.eval_episodes = 3;
  c.epsilon_anneal_steps = 200;
  c.policy.hidden = 8;
  c.policy.mix_embed = 4;
  c.policy.hyper_hidden = 8;
  c.scaffold.embed_dim = 3;
  c.scaffold.latent_dim = 4;
  c.scaffold.hidden = 12;
  return c;
}

std::vector<const EpisodeBatch*> buffer_ptrs(const ReplayBuffer& buf, int count) {
  std::vector<const EpisodeBatch*> out;
  for (int i = 0; i < count; ++i) out.push_back(&buf.at(i));
  return out;
}

void fill_buffer(Trainer& tr, int episodes, double alpha, double epsilon) {
  auto env = matrix_factory()();
  RandomStream er(401), pr(402);
  const EnvSpec& sp = env->spec();
  for (int k = 0; k < episodes; ++k) {
    EpisodeBatch ep;
    ep.n_agents = sp.n_agents;
    auto [s, obs] = env->reset(er);
    ep.states.push_back(s);
    ep.obs.push_back(obs);
    auto h = tr.policies().make_hidden();
    std::vector<int> prev(sp.n_agents, -1);
    bool done = false;
    while (!done) {
      const auto a = tr.policies().act(obs, prev, s, h, alpha, epsilon, pr);
      const StepResult r = env->step(a.actions, er);
      ep.actions.push_back(a.actions);
      ep.rewards_ext.push_back(r.reward_ext);
      ep.dones.push_back(r.done ? 1 : 0);
      ep.length += 1;
      s = r.next_state;
      obs = r.next_obs;
      ep.states.push_back(s);
      ep.obs.push_back(obs);
      prev = a.actions;
      done = r.done;
      ep.won = r.won;
    }
    tr.buffer().add(std::move(ep));
  }
}

}  // namespace

TEST_CASE("schedules interpolate linearly and clamp") {
  Schedules s;
  s.alpha_start = 0.1;
  s.alpha_end = 0.05;
  s.alpha_steps = 1000;
  s.epsilon_start = 1.0;
  s.epsilon_steps = 500;
  CHECK(s.alpha(0) == Catch::Approx(0.1));
  CHECK(s.alpha(500) == Catch::Approx(0.075));
  CHECK(s.alpha(1000) == Catch::Approx(0.05));
  CHECK(s.alpha(5000) == Catch::Approx(0.05));
  CHECK(s.epsilon(0) == Catch::Approx(1.0));
  CHECK(s.epsilon(250) == Catch::Approx(0.5));
  CHECK(s.epsilon(500) == 0.0);
  CHECK(s.epsilon(123456) == 0.0);

  Schedules flat;
  flat.alpha_end = 0.07;
  CHECK(flat.alpha(0) == Catch::Approx(0.07));
  CHECK(flat.epsilon(0) == 0.0);
}

TEST_CASE("metrics csv has a fixed header and stable formatting") {
  CHECK(metrics_to_csv({}) == std::string(kMetricsHeader) + "\n");

  MetricsRow r;
  r.step = 100;
  r.episodes = 7;
  r.test_return_mean = 0.5;
  r.test_win_rate = 0.25;
  r.loss_td = 1.5;
  r.loss_elbo = -2.0;
  r.loss_actor = 0.125;
  r.loss_value = 0.0;
  r.mean_r_int = 0.0625;
  r.actor_entropy = 1.5;
  r.alpha = 0.1;
  r.epsilon = 0.875;
  const std::string csv = metrics_to_csv({r});
  CHECK(csv == std::string(kMetricsHeader) +
                   "\n100,7,0.5,0.25,1.5,-2,0.125,0,0.0625,1.5,0.1,0.875\n");
}

TEST_CASE("trainer config rejects bad values") {
  TrainerConfig c = fast_cfg();
  c.batch_size = 100;
  c.buffer_capacity = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = fast_cfg();
  c.variant = "qmix";
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = fast_cfg();
  c.alpha_start = 0.05;
  c.alpha_end = 0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = fast_cfg();
  c.train_interval = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = fast_cfg();
  c.eval_episodes = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = fast_cfg();
  c.epsilon_start = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = fast_cfg();
  c.step_max = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("evaluate is deterministic and rejects empty runs") {
  CooperativeMatrixGame env(shipped_matrix_game());
  PolicyConfig pc;
  pc.obs_dim = env.spec().obs_dim;
  pc.state_dim = env.spec().state_dim;
  pc.n_agents = env.spec().n_agents;
  pc.n_actions = env.spec().n_actions;
  pc.hidden = 8;
  pc.mix_embed = 4;
  pc.hyper_hidden = 8;
  RandomStream rng(21);
  PolicyLearner pl(pc, rng);

  RandomStream e1(5), e2(5);
  const EvalMetrics m1 = evaluate(pl, env, 10, e1);
  const EvalMetrics m2 = evaluate(pl, env, 10, e2);
  CHECK(m1.return_mean == m2.return_mean);
  CHECK(m1.win_rate == m2.win_rate);
  CHECK(m1.win_rate >= 0.0);
  CHECK(m1.win_rate <= 1.0);

  const auto hx = pl.xi().value_hash();
  const auto he = pl.eta().value_hash();
  RandomStream e3(6);
  (void)evaluate(pl, env, 4, e3);
  CHECK(pl.xi().value_hash() == hx);
  CHECK(pl.eta().value_hash() == he);

  RandomStream e4(7);
  CHECK_THROWS_AS(evaluate(pl, env, 0, e4), DimensionError);
}

TEST_CASE("random walkers almost never win the corridor") {
  NoisyCorridor env{NoisyCorridorConfig{}};
  RandomStream rng(777);
  int wins = 0;
  for (int ep = 0; ep < 100; ++ep) {
    env.reset(rng);
    bool done = false;
    while (!done) {
      std::vector<int> u(env.spec().n_agents);
      for (int& a : u) a = rng.uniform_int(env.spec().n_actions);
      const StepResult r = env.step(u, rng);
      done = r.done;
      if (r.won) ++wins;
    }
  }
  CHECK(wins < 5);
}

TEST_CASE("zero step budget produces an empty log") {
  TrainerConfig c = fast_cfg();
  c.step_max = 0;
  Trainer tr(c, matrix_factory(), 3);
  const auto rows = tr.run();
  CHECK(rows.empty());
  CHECK(metrics_to_csv(rows) == std::string(kMetricsHeader) + "\n");
  CHECK(tr.env_steps() == 0);
  CHECK(tr.episodes_seen() == 0);
}

TEST_CASE("training smoke run on the matrix game") {
  Trainer tr(fast_cfg(), matrix_factory(), 3);
  const auto rows = tr.run();
  REQUIRE(rows.size() == 4);
  for (size_t k = 0; k < rows.size(); ++k) {
    const MetricsRow& r = rows[k];
    CHECK(r.step == (long)(k + 1) * 100);
    CHECK(r.episodes >= 1);
    if (k > 0) CHECK(r.episodes >= rows[k - 1].episodes);
    CHECK(std::isfinite(r.test_return_mean));
    CHECK(r.test_win_rate >= 0.0);
    CHECK(r.test_win_rate <= 1.0);
    for (double v : {r.loss_td, r.loss_elbo, r.loss_actor, r.loss_value, r.actor_entropy})
      CHECK(std::isfinite(v));
    CHECK(r.mean_r_int >= 0.0);
    CHECK(r.alpha == Catch::Approx(tr.schedules().alpha(r.step)));
    CHECK(r.epsilon == Catch::Approx(tr.schedules().epsilon(r.step)));
  }
  CHECK(rows[0].alpha == Catch::Approx(0.0875));
  CHECK(rows[0].epsilon == Catch::Approx(0.5));
  CHECK(rows[3].epsilon == 0.0);
  CHECK(rows.back().loss_td != 0.0);
  CHECK(rows.back().loss_elbo != 0.0);
  CHECK(tr.env_steps() >= 400);
  CHECK(tr.episodes_seen() >= rows.back().episodes);
  CHECK(tr.buffer().size() <= tr.buffer().capacity());
}

TEST_CASE("same seed reproduces the metrics byte for byte") {
  Trainer a(fast_cfg(), matrix_factory(), 7);
  Trainer b(fast_cfg(), matrix_factory(), 7);
  const std::string csv_a = metrics_to_csv(a.run());
  const std::string csv_b = metrics_to_csv(b.run());
  CHECK(csv_a == csv_b);

  Trainer c(fast_cfg(), matrix_factory(), 8);
  CHECK(metrics_to_csv(c.run()) != csv_a);
}

TEST_CASE("trainer runs on the corridor") {
  TrainerConfig c = fast_cfg();
  c.step_max = 150;
  c.train_interval = 50;
  c.eval_interval = 75;
  c.target_update_interval = 75;
  Trainer tr(c, corridor_factory(), 11);
  const auto rows = tr.run();
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].step == 75);
  CHECK(rows[1].step == 150);
  for (const auto& r : rows) CHECK(std::isfinite(r.loss_td));
}

TEST_CASE("policy pass leaves scaffold parameters untouched") {
  Trainer tr(fast_cfg(), matrix_factory(), 5);
  fill_buffer(tr, 6, 0.3, 0.2);
  REQUIRE(tr.scaffolds() != nullptr);
  const auto hs = tr.scaffolds()->params().value_hash();
  const auto hz = tr.policies().zeta().value_hash();
  tr.train_policies_once();
  CHECK(tr.scaffolds()->params().value_hash() == hs);
  CHECK(tr.policies().zeta().value_hash() != hz);
  tr.train_scaffolds_once();
  CHECK(tr.scaffolds()->params().value_hash() != hs);
}

TEST_CASE("intrinsic rows come from the live scaffold") {
  Trainer tr(fast_cfg(), matrix_factory(), 9);
  fill_buffer(tr, 5, 0.3, 0.2);
  const StagedBatch sb = tr.policies().stage(buffer_ptrs(tr.buffer(), 4));
  const auto r1 = tr.intrinsic_rows(sb);
  const auto r2 = tr.intrinsic_rows(sb);
  CHECK(r1 == r2);
  REQUIRE((int)r1.size() == sb.T);
  const double clip = tr.config().scaffold_reward_clip;
  for (int t = 0; t < sb.T; ++t)
    for (int r = 0; r < sb.E * sb.n; ++r) {
      CHECK(r1[t][r] >= 0.0);
      CHECK(r1[t][r] <= clip);
      if (sb.agent_mask[t][r] == 0.0) CHECK(r1[t][r] == 0.0);
    }

  // single-transition cross-check against the scaffold interface
  ScaffoldBatch one;
  one.b = 1;
  one.s.assign(sb.states[0].begin(), sb.states[0].begin() + sb.state_dim);
  one.s_next.assign(sb.states[1].begin(), sb.states[1].begin() + sb.state_dim);
  one.u.assign(sb.n, {});
  for (int i = 0; i < sb.n; ++i) one.u[i].push_back(sb.actions[0][i]);
  const auto vals = tr.scaffolds()->scaffold_values_all(one);
  for (int i = 0; i < sb.n; ++i)
    CHECK(r1[0][i] == Catch::Approx(std::clamp(vals[i][0], 0.0, clip)).margin(1e-12));

  tr.train_scaffolds_once();
  CHECK(tr.intrinsic_rows(sb) != r1);
}

TEST_CASE("reward folding identities") {
  Trainer tr(fast_cfg(), matrix_factory(), 13);
  fill_buffer(tr, 4, 0.3, 0.2);
  const StagedBatch sb = tr.policies().stage(buffer_ptrs(tr.buffer(), 4));
  const std::vector<std::vector<double>> zeros(sb.T,
                                               std::vector<double>((size_t)sb.E * sb.n, 0.0));
  std::vector<std::vector<double>> ones(sb.T, std::vector<double>((size_t)sb.E * sb.n, 1.0));

  StagedBatch mixed = sb;
  add_intrinsic_to_rewards(mixed, zeros, 1.0);
  CHECK(mixed.rewards == sb.rewards);

  mixed = sb;
  add_intrinsic_to_rewards(mixed, ones, 0.0);
  CHECK(mixed.rewards == sb.rewards);

  mixed = sb;
  add_intrinsic_to_rewards(mixed, ones, 0.5);
  for (int t = 0; t < sb.T; ++t)
    for (int e = 0; e < sb.E; ++e) {
      if (sb.step_mask[t][e] == 1.0)
        CHECK(mixed.rewards[t][e] == Catch::Approx(sb.rewards[t][e] + 0.5 * sb.n));
      else
        CHECK(mixed.rewards[t][e] == sb.rewards[t][e]);
    }

  StagedBatch zero_mixed = sb;
  add_intrinsic_to_rewards(zero_mixed, zeros, 0.7);
  CHECK(tr.policies().td_targets(zero_mixed) == tr.policies().td_targets(sb));
}

TEST_CASE("variant wiring") {
  SECTION("qmix baseline drops actor and scaffolds") {
    TrainerConfig c = fast_cfg("qmix_baseline");
    c.step_max = 150;
    c.eval_interval = 75;
    Trainer tr(c, matrix_factory(), 2);
    CHECK(tr.scaffolds() == nullptr);
    CHECK(tr.config().alpha_start == 0.0);
    CHECK(tr.config().alpha_end == 0.0);
    const auto rows = tr.run();
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) {
      CHECK(r.loss_actor == 0.0);
      CHECK(r.loss_elbo == 0.0);
      CHECK(r.mean_r_int == 0.0);
      CHECK(r.alpha == 0.0);
    }
  }
  SECTION("int_ext keeps scaffolds but not the actor") {
    Trainer tr(fast_cfg("int_ext"), matrix_factory(), 2);
    CHECK(tr.scaffolds() != nullptr);
    CHECK(tr.config().alpha_start == 0.0);
    CHECK_FALSE(variant_uses_actor("int_ext"));
  }
  SECTION("no_maxent zeroes the entropy weight") {
    Trainer tr(fast_cfg("no_maxent"), matrix_factory(), 2);
    CHECK(tr.config().policy.beta == 0.0);
    CHECK(tr.config().alpha_start > 0.0);
  }
  SECTION("no_s blinds the actor to the state") {
    Trainer tr(fast_cfg("no_s"), matrix_factory(), 2);
    CHECK_FALSE(tr.config().policy.actor_sees_state);
  }
  SECTION("scaffold variant mapping") {
    CHECK(Trainer(fast_cfg("no_cvae"), matrix_factory(), 2).config().scaffold.variant ==
          "euclidean");
    CHECK(Trainer(fast_cfg("two_cvaes"), matrix_factory(), 2).config().scaffold.variant ==
          "two_cvaes");
    CHECK(Trainer(fast_cfg("global_con"), matrix_factory(), 2).config().scaffold.variant ==
          "global_con");
    CHECK(Trainer(fast_cfg(), matrix_factory(), 2).config().scaffold.variant == "ices");
  }
  SECTION("unknown variant is rejected") {
    CHECK_THROWS_AS(Trainer(fast_cfg("vdn"), matrix_factory(), 2), ConfigError);
  }
}

TEST_CASE("td targets stay pinned to the frozen copy") {
  Trainer tr(fast_cfg(), matrix_factory(), 17);
  fill_buffer(tr, 4, 0.3, 0.2);
  PolicyLearner& pl = tr.policies();
  const StagedBatch sb = pl.stage(buffer_ptrs(tr.buffer(), 4));
  const auto y1 = pl.td_targets(sb);
  pl.td_step(sb);
  const auto y2 = pl.td_targets(sb);
  CHECK(y1 == y2);
  pl.sync_target();
  CHECK(pl.td_targets(sb) != y1);
}

TEST_CASE("actor nudges toward the rewarded action") {
  PolicyConfig cfg;
  cfg.obs_dim = 1;
  cfg.state_dim = 1;
  cfg.n_agents = 1;
  cfg.n_actions = 2;
  cfg.hidden = 4;
  cfg.mix_embed = 2;
  cfg.hyper_hidden = 4;
  cfg.literal_advantage = true;
  cfg.beta = 0.1;
  RandomStream rng(31);
  PolicyLearner pl(cfg, rng);

  EpisodeBatch ep;
  ep.n_agents = 1;
  ep.length = 1;
  ep.states = {{0.25}, {0.25}};
  ep.obs = {{{0.4}}, {{0.4}}};
  ep.actions = {{0}};
  ep.rewards_ext = {0.0};
  ep.dones = {1};
  const StagedBatch b = pl.stage({&ep});

  // taken-action probability from a forward pass
  Tape ft;
  const std::vector<double> input = {0.4, 0.0, 0.0, 1.0};  // obs, no prev action, agent id
  const auto so = pl.actor().step(ft, ft.constant(1, cfg.agent_input_dim(), input),
                                  ft.constant(1, cfg.hidden, std::vector<double>(cfg.hidden, 0.0)),
                                  ft.constant(1, 1, {0.25}));
  const auto& logits = ft.val(so.out.id);
  const double m = std::max(logits[0], logits[1]);
  const double z0 = std::exp(logits[0] - m), z1 = std::exp(logits[1] - m);
  const double pi0 = z0 / (z0 + z1), pi1 = z1 / (z0 + z1);

  const std::vector<std::vector<double>> r_int = {{5.0}};
  const std::vector<std::vector<double>> v = {{0.0}};
  const double adv = 5.0 - 0.0 - cfg.beta;

  Tape t;
  const Ref loss = pl.exploration_loss(t, b, r_int, v);
  pl.xi().zero_grads();
  t.backward(loss);
  Tensor* hb = pl.xi().find("actor.head.b1");
  REQUIRE(hb != nullptr);
  hb->ensure_grad();
  REQUIRE(hb->grad.size() == 2);
  // descent on -adv*log pi raises the taken logit and lowers the other
  CHECK(hb->grad[0] < 0.0);
  CHECK(hb->grad[1] > 0.0);
  CHECK(hb->grad[0] == Catch::Approx(-adv * (1.0 - pi0)).epsilon(1e-9));
  CHECK(hb->grad[1] == Catch::Approx(adv * pi1).epsilon(1e-9));
}

TEST_CASE("zero learning rates freeze every parameter store") {
  TrainerConfig c = fast_cfg();
  c.step_max = 120;
  c.eval_interval = 60;
  c.policy.lr_exploit = 0.0;
  c.policy.lr_explore = 0.0;
  c.policy.lr_value = 0.0;
  c.scaffold.lr = 0.0;
  Trainer tr(c, matrix_factory(), 19);
  const auto hz = tr.policies().zeta().value_hash();
  const auto ht = tr.policies().zeta_target().value_hash();
  const auto hx = tr.policies().xi().value_hash();
  const auto he = tr.policies().eta().value_hash();
  const auto hs = tr.scaffolds()->params().value_hash();
  tr.run();
  CHECK(tr.policies().zeta().value_hash() == hz);
  CHECK(tr.policies().zeta_target().value_hash() == ht);
  CHECK(tr.policies().xi().value_hash() == hx);
  CHECK(tr.policies().eta().value_hash() == he);
  CHECK(tr.scaffolds()->params().value_hash() == hs);
}

TEST_CASE("buffer stays within capacity across a run") {
  TrainerConfig c = fast_cfg();
  c.buffer_capacity = 6;
  c.batch_size = 4;
  c.step_max = 250;
  Trainer tr(c, matrix_factory(), 23);
  tr.run();
  CHECK(tr.buffer().size() <= 6);
  CHECK(tr.buffer().total_added() > 6);
}

TEST_CASE("insufficient buffer skips training with a notice") {
  std::vector<std::string> notes;
  TrainerConfig c = fast_cfg();
  Trainer tr(c, matrix_factory(), 29, [&](const std::string& s) { notes.push_back(s); });
  const auto hz = tr.policies().zeta().value_hash();
  tr.train_policies_once();
  tr.train_scaffolds_once();
  CHECK(notes.size() == 2);
  CHECK(tr.policies().zeta().value_hash() == hz);

  // a run whose first train events fire before the buffer can serve a batch
  notes.clear();
  TrainerConfig big = fast_cfg();
  big.batch_size = 30;
  big.step_max = 100;
  Trainer tr2(big, matrix_factory(), 29, [&](const std::string& s) { notes.push_back(s); });
  tr2.run();
  CHECK(!notes.empty());
}
