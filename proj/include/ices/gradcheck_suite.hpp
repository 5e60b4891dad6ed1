#pragma once

// Whole-model gradient verification, shared by the CLI subcommand and the
// acceptance suite. Six components, each finite-difference-checking one loss
// path end to end. The exact-entropy actor estimator is checked against the
// importance-weighted surrogate whose derivative at the reference point
// equals the estimator (see the policies tests for the derivation); the
// literal-advantage mode is a plain function of the parameters and is
// checked directly.

#include <cmath>
#include <string>
#include <vector>

#include "ices/gradcheck.hpp"
#include "ices/matrix_game.hpp"
#include "ices/nn.hpp"
#include "ices/policies.hpp"
#include "ices/scaffolds.hpp"

namespace ices {

struct ComponentReport {
  std::string component;
  GradCheckReport rep;
};

namespace gcdetail {

inline void maybe_bump(ParamStore& ps, bool do_bump) {
  if (!do_bump || ps.items.empty()) return;
  Tensor& t = ps.items.front().second;
  t.ensure_grad();
  if (!t.grad.empty()) t.grad[0] += 0.05;
}

inline std::vector<EpisodeBatch> random_matrix_episodes(int count, RandomStream& rng) {
  CooperativeMatrixGame env(shipped_matrix_game());
  const EnvSpec& sp = env.spec();
  std::vector<EpisodeBatch> eps;
  for (int k = 0; k < count; ++k) {
    EpisodeBatch ep;
    ep.n_agents = sp.n_agents;
    auto [s, obs] = env.reset(rng);
    ep.states.push_back(s);
    ep.obs.push_back(obs);
    bool done = false;
    while (!done) {
      std::vector<int> u(sp.n_agents);
      for (int& a : u) a = rng.uniform_int(sp.n_actions);
      const StepResult r = env.step(u, rng);
      ep.actions.push_back(u);
      ep.rewards_ext.push_back(r.reward_ext);
      ep.dones.push_back(r.done ? 1 : 0);
      ep.length += 1;
      ep.states.push_back(r.next_state);
      ep.obs.push_back(r.next_obs);
      done = r.done;
      ep.won = r.won;
    }
    eps.push_back(std::move(ep));
  }
  return eps;
}

inline EpisodeBatch toy_episode(int action) {
  EpisodeBatch ep;
  ep.n_agents = 1;
  ep.length = 1;
  ep.states = {{0.25}, {0.25}};
  ep.obs = {{{0.4}}, {{0.4}}};
  ep.actions = {{action}};
  ep.rewards_ext = {0.0};
  ep.dones = {1};
  return ep;
}

inline std::vector<const EpisodeBatch*> ptrs(const std::vector<EpisodeBatch>& eps) {
  std::vector<const EpisodeBatch*> out;
  for (const auto& e : eps) out.push_back(&e);
  return out;
}

inline PolicyConfig toy_policy_cfg() {
  PolicyConfig c;
  c.obs_dim = 1;
  c.state_dim = 1;
  c.n_agents = 1;
  c.n_actions = 3;
  c.hidden = 4;
  c.mix_embed = 2;
  c.hyper_hidden = 4;
  return c;
}

inline std::vector<double> toy_logits(PolicyLearner& pl, const PolicyConfig& cfg) {
  Tape t;
  std::vector<double> in(cfg.agent_input_dim(), 0.0);
  in[0] = 0.4;
  in[cfg.obs_dim + cfg.n_actions] = 1.0;  // agent id; no previous action
  const auto so = pl.actor().step(t, t.constant(1, cfg.agent_input_dim(), in),
                                  t.constant(1, cfg.hidden, std::vector<double>(cfg.hidden, 0.0)),
                                  t.constant(1, cfg.state_dim, {0.25}));
  const auto& v = t.val(so.out.id);
  return {v.begin(), v.end()};
}

inline std::vector<double> softmax_of(const std::vector<double>& z) {
  double m = z[0];
  for (double x : z) m = std::max(m, x);
  double sum = 0.0;
  std::vector<double> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

inline GradCheckReport worse_of(const GradCheckReport& a, const GradCheckReport& b) {
  GradCheckReport r = (b.max_rel_err > a.max_rel_err) ? b : a;
  r.coords_checked = a.coords_checked + b.coords_checked;
  r.pass = a.pass && b.pass;
  return r;
}

}  // namespace gcdetail

// Runs all components; pass `inject` a component name to corrupt its analytic
// gradient and exercise the failure path.
inline std::vector<ComponentReport> run_gradcheck_suite(std::uint64_t seed,
                                                        const std::string& inject = "") {
  using namespace gcdetail;
  std::vector<ComponentReport> out;
  RandomStream master(seed);

  {  // dense layers through tanh, squared-error head
    RandomStream r = master.split(1);
    ParamStore ps;
    Mlp net(ps, "mlp", {3, 6, 2}, Activation::Tanh, r);
    const int B = 4;
    std::vector<double> x((size_t)B * 3), y((size_t)B * 2);
    for (double& v : x) v = r.normal();
    for (double& v : y) v = r.normal();
    auto build = [&](Tape& t) {
      return mean_all(square_(sub(net.forward(t, t.constant(B, 3, x)), t.constant(B, 2, y))));
    };
    const auto rep = fd_check(
        {&ps}, [&] { Tape t; return t.scalar_val(build(t)); },
        [&] {
          Tape t;
          const Ref l = build(t);
          ps.zero_grads();
          t.backward(l);
          maybe_bump(ps, inject == "mlp");
        });
    out.push_back({"mlp", rep});
  }

  {  // two recurrent steps
    RandomStream r = master.split(2);
    ParamStore ps;
    GruCell cell(ps, "gru", 2, 4, r);
    const int B = 3;
    std::vector<double> x1((size_t)B * 2), x2((size_t)B * 2);
    for (double& v : x1) v = r.normal();
    for (double& v : x2) v = r.normal();
    auto build = [&](Tape& t) {
      const Ref h0 = t.constant(B, 4, std::vector<double>((size_t)B * 4, 0.0));
      const Ref h1 = cell.forward(t, t.constant(B, 2, x1), h0);
      const Ref h2 = cell.forward(t, t.constant(B, 2, x2), h1);
      return mean_all(square_(h2));
    };
    const auto rep = fd_check(
        {&ps}, [&] { Tape t; return t.scalar_val(build(t)); },
        [&] {
          Tape t;
          const Ref l = build(t);
          ps.zero_grads();
          t.backward(l);
          maybe_bump(ps, inject == "gru");
        });
    out.push_back({"gru", rep});
  }

  {  // recurrent Q plus monotone mixer through the TD loss
    RandomStream r = master.split(3);
    CooperativeMatrixGame env(shipped_matrix_game());
    PolicyConfig cfg;
    cfg.obs_dim = env.spec().obs_dim;
    cfg.state_dim = env.spec().state_dim;
    cfg.n_agents = env.spec().n_agents;
    cfg.n_actions = env.spec().n_actions;
    cfg.hidden = 6;
    cfg.mix_embed = 3;
    cfg.hyper_hidden = 6;
    PolicyLearner pl(cfg, r);
    RandomStream er = master.split(4);
    const auto eps = random_matrix_episodes(3, er);
    const StagedBatch b = pl.stage(ptrs(eps));
    const auto rep = fd_check(
        {&pl.zeta()},
        [&] {
          Tape t;
          return t.scalar_val(pl.td_loss(t, b));
        },
        [&] {
          Tape t;
          const Ref l = pl.td_loss(t, b);
          pl.zeta().zero_grads();
          t.backward(l);
          maybe_bump(pl.zeta(), inject == "mixer");
        });
    out.push_back({"mixer", rep});
  }

  {  // variational bound of the latent transition model
    RandomStream r = master.split(5);
    ScaffoldConfig sc;
    sc.state_dim = 3;
    sc.n_agents = 2;
    sc.n_actions = 3;
    sc.embed_dim = 2;
    sc.latent_dim = 2;
    sc.hidden = 8;
    ScaffoldModel m(sc, r);
    ScaffoldBatch b;
    b.b = 4;
    b.s.resize((size_t)b.b * sc.state_dim);
    b.s_next.resize((size_t)b.b * sc.state_dim);
    for (double& v : b.s) v = r.normal();
    for (double& v : b.s_next) v = r.normal();
    b.u.assign(sc.n_agents, std::vector<int>(b.b));
    for (auto& row : b.u)
      for (int& a : row) a = r.uniform_int(sc.n_actions);
    const auto noise = m.draw_elbo_noise(b.b, r);
    const auto rep = fd_check(
        {&m.params()},
        [&] {
          Tape t;
          return t.scalar_val(m.elbo_loss(t, b, noise));
        },
        [&] {
          Tape t;
          const Ref l = m.elbo_loss(t, b, noise);
          m.params().zero_grads();
          t.backward(l);
          maybe_bump(m.params(), inject == "elbo");
        });
    out.push_back({"elbo", rep});
  }

  {  // exploration actor, both advantage modes
    // literal mode: the loss is a plain function of the parameters
    PolicyConfig cfg = toy_policy_cfg();
    cfg.literal_advantage = true;
    cfg.beta = 0.1;
    RandomStream r = master.split(6);
    PolicyLearner pl(cfg, r);
    std::vector<EpisodeBatch> eps;
    for (int k = 0; k < 6; ++k) eps.push_back(toy_episode(k % 3));
    const StagedBatch b = pl.stage(ptrs(eps));
    const auto v = pl.value_values(b);
    RandomStream rr = master.split(7);
    std::vector<std::vector<double>> r_int(b.T, std::vector<double>((size_t)b.E, 0.0));
    for (auto& row : r_int)
      for (double& x : row) x = rr.uniform01();
    const auto rep_lit = fd_check(
        {&pl.xi()},
        [&] {
          Tape t;
          return t.scalar_val(pl.exploration_loss(t, b, r_int, v));
        },
        [&] {
          Tape t;
          const Ref l = pl.exploration_loss(t, b, r_int, v);
          pl.xi().zero_grads();
          t.backward(l);
          maybe_bump(pl.xi(), inject == "actor");
        });

    // exact-entropy mode against the importance-weighted surrogate
    PolicyConfig cfg2 = toy_policy_cfg();
    cfg2.beta = 0.1;
    RandomStream r2 = master.split(8);
    PolicyLearner pl2(cfg2, r2);
    const std::vector<double> r_table{0.2, 1.0, -0.4};
    const auto p_ref = softmax_of(toy_logits(pl2, cfg2));
    RandomStream sr = master.split(9);
    const int N = 20000;
    std::vector<EpisodeBatch> eps2;
    eps2.reserve(N);
    std::vector<int> freq(3, 0);
    for (int k = 0; k < N; ++k) {
      const double u01 = sr.uniform01();
      int u = 2;
      double acc = 0.0;
      for (int a = 0; a < 3; ++a) {
        acc += p_ref[a];
        if (u01 < acc) {
          u = a;
          break;
        }
      }
      ++freq[u];
      eps2.push_back(toy_episode(u));
    }
    const StagedBatch b2 = pl2.stage(ptrs(eps2));
    const auto v2 = pl2.value_values(b2);
    const double V = v2[0][0];  // every row shares one input
    std::vector<std::vector<double>> ri2(1, std::vector<double>(N, 0.0));
    for (int k = 0; k < N; ++k) ri2[0][k] = r_table[eps2[k].actions[0][0]];
    const auto rep_exact = fd_check(
        {&pl2.xi()},
        [&] {
          const auto p = softmax_of(toy_logits(pl2, cfg2));
          double j = 0.0;
          for (int u = 0; u < 3; ++u)
            j += (double)freq[u] / N * (p[u] / p_ref[u]) *
                 (r_table[u] - V - cfg2.beta * std::log(p[u]));
          return -j;
        },
        [&] {
          Tape t;
          const Ref l = pl2.exploration_loss(t, b2, ri2, v2);
          pl2.xi().zero_grads();
          t.backward(l);
        });
    out.push_back({"actor", worse_of(rep_lit, rep_exact)});
  }

  {  // baseline regression
    PolicyConfig cfg = toy_policy_cfg();
    RandomStream r = master.split(10);
    PolicyLearner pl(cfg, r);
    std::vector<EpisodeBatch> eps;
    for (int k = 0; k < 6; ++k) eps.push_back(toy_episode(k % 3));
    const StagedBatch b = pl.stage(ptrs(eps));
    RandomStream rr = master.split(11);
    std::vector<std::vector<double>> r_int(b.T, std::vector<double>((size_t)b.E, 0.0));
    for (auto& row : r_int)
      for (double& x : row) x = rr.uniform01();
    const auto rep = fd_check(
        {&pl.eta()},
        [&] {
          Tape t;
          return t.scalar_val(pl.value_loss(t, b, r_int));
        },
        [&] {
          Tape t;
          const Ref l = pl.value_loss(t, b, r_int);
          pl.eta().zero_grads();
          t.backward(l);
          maybe_bump(pl.eta(), inject == "value");
        });
    out.push_back({"value", rep});
  }

  return out;
}

}  // namespace ices
