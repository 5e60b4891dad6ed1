#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ices/autodiff.hpp"
#include "ices/distributions.hpp"
#include "ices/episode.hpp"
#include "ices/errors.hpp"
#include "ices/nn.hpp"
#include "ices/rng.hpp"

namespace ices {

struct PolicyConfig {
  int obs_dim = 0;
  int state_dim = 0;
  int n_agents = 0;
  int n_actions = 0;
  int hidden = 64;        // trunk width (fc + GRU) for agent, actor and value nets
  int mix_embed = 32;     // mixing-network embedding size
  int hyper_hidden = 64;  // hypernetwork hidden width
  double gamma = 0.99;
  double lr_exploit = 5e-4;
  double lr_explore = 1e-3;
  double lr_value = 1e-3;
  double grad_clip = 10.0;
  double beta = 0.1;                // entropy coefficient in the actor advantage
  bool literal_advantage = false;   // advantage (r - V - beta) instead of exact entropy form
  bool actor_sees_state = true;     // false: exploration nets get zeros in place of s

  int agent_input_dim() const { return obs_dim + n_actions + n_agents; }

  void validate() const {
    if (obs_dim <= 0 || state_dim <= 0 || n_agents <= 0 || n_actions <= 0)
      throw ConfigError("policy config: dimensions must be positive");
    if (hidden <= 0 || mix_embed <= 0 || hyper_hidden <= 0)
      throw ConfigError("policy config: network widths must be positive");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("policy config: gamma must be in [0, 1]");
    if (lr_exploit < 0.0 || lr_explore < 0.0 || lr_value < 0.0)
      throw ConfigError("policy config: learning rates must be non-negative");
    if (beta < 0.0) throw ConfigError("policy config: beta must be non-negative");
    if (grad_clip <= 0.0) throw ConfigError("policy config: grad clip must be positive");
  }
};

// Lowest index wins ties so greedy play is reproducible across platforms.
inline int argmax_lowest(const std::vector<double>& v) {
  if (v.empty()) throw DimensionError("argmax: empty vector");
  int best = 0;
  for (int i = 1; i < (int)v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Unavailable actions get a large negative surrogate so they never win argmax
// and carry ~zero probability after a softmax.
inline constexpr double kUnavailable = -1e30;

inline std::vector<double> apply_availability(std::vector<double> scores,
                                              const std::vector<std::uint8_t>& avail) {
  if (scores.size() != avail.size()) throw DimensionError("availability mask: length mismatch");
  bool any = false;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (avail[i]) any = true;
    else scores[i] = kUnavailable;
  }
  if (!any) throw DegenerateDistributionError("availability mask: no available action");
  return scores;
}

// Per-agent step input: observation, previous action one-hot (zeros on the
// first step), agent id one-hot.
inline void write_agent_input(std::vector<double>& dst, size_t off,
                              const std::vector<double>& obs, int prev_action, int agent_id,
                              int n_actions, int n_agents) {
  size_t p = off;
  for (double v : obs) dst[p++] = v;
  for (int a = 0; a < n_actions; ++a) dst[p++] = a == prev_action ? 1.0 : 0.0;
  for (int i = 0; i < n_agents; ++i) dst[p++] = i == agent_id ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// Batched, padded view of sampled episodes
// ---------------------------------------------------------------------------

// Episodes padded to the longest length in the batch. Row r = e * n + i holds
// episode e, agent i; positions run 0..T with inputs[t] = (o_t, u_{t-1}, id).
struct StagedBatch {
  int E = 0, T = 0, n = 0, in_dim = 0, state_dim = 0, n_actions = 0;
  std::vector<std::vector<double>> inputs;        // T+1 x [E*n * in_dim]
  std::vector<std::vector<double>> states;        // T+1 x [E * S]
  std::vector<std::vector<double>> states_tiled;  // T x [E*n * S]
  std::vector<std::vector<int>> actions;          // T x [E*n]
  std::vector<std::vector<double>> rewards;       // T x [E]
  std::vector<std::vector<double>> not_done;      // T x [E], 0 at terminal steps
  std::vector<std::vector<double>> step_mask;     // T x [E], 1 while the episode is live
  std::vector<std::vector<double>> agent_mask;    // T x [E*n]
  double step_total = 0.0;
  double agent_total = 0.0;
};

inline StagedBatch stage_episodes(const std::vector<const EpisodeBatch*>& eps,
                                  const PolicyConfig& cfg) {
  if (eps.empty()) throw DimensionError("stage: empty batch");
  StagedBatch b;
  b.E = (int)eps.size();
  b.n = cfg.n_agents;
  b.in_dim = cfg.agent_input_dim();
  b.state_dim = cfg.state_dim;
  b.n_actions = cfg.n_actions;
  for (const auto* e : eps) {
    e->validate();
    if (e->n_agents != cfg.n_agents) throw DimensionError("stage: agent count mismatch");
    if ((int)e->states[0].size() != cfg.state_dim) throw DimensionError("stage: state width");
    if ((int)e->obs[0][0].size() != cfg.obs_dim) throw DimensionError("stage: obs width");
    b.T = std::max(b.T, e->length);
  }
  const int rows = b.E * b.n;
  b.inputs.assign(b.T + 1, std::vector<double>((size_t)rows * b.in_dim, 0.0));
  b.states.assign(b.T + 1, std::vector<double>((size_t)b.E * b.state_dim, 0.0));
  b.states_tiled.assign(b.T, std::vector<double>((size_t)rows * b.state_dim, 0.0));
  b.actions.assign(b.T, std::vector<int>(rows, 0));
  b.rewards.assign(b.T, std::vector<double>(b.E, 0.0));
  b.not_done.assign(b.T, std::vector<double>(b.E, 0.0));
  b.step_mask.assign(b.T, std::vector<double>(b.E, 0.0));
  b.agent_mask.assign(b.T, std::vector<double>(rows, 0.0));
  for (int e = 0; e < b.E; ++e) {
    const EpisodeBatch& ep = *eps[e];
    for (int t = 0; t <= ep.length; ++t) {
      for (int i = 0; i < b.n; ++i) {
        const int prev = t > 0 ? ep.actions[t - 1][i] : -1;
        write_agent_input(b.inputs[t], ((size_t)(e * b.n + i)) * b.in_dim, ep.obs[t][i], prev, i,
                          cfg.n_actions, cfg.n_agents);
      }
      std::copy(ep.states[t].begin(), ep.states[t].end(),
                b.states[t].begin() + (size_t)e * b.state_dim);
    }
    for (int t = 0; t < ep.length; ++t) {
      for (int i = 0; i < b.n; ++i) {
        const int r = e * b.n + i;
        b.actions[t][r] = ep.actions[t][i];
        b.agent_mask[t][r] = 1.0;
        std::copy(ep.states[t].begin(), ep.states[t].end(),
                  b.states_tiled[t].begin() + (size_t)r * b.state_dim);
      }
      b.rewards[t][e] = ep.rewards_ext[t];
      b.not_done[t][e] = ep.dones[t] ? 0.0 : 1.0;
      b.step_mask[t][e] = 1.0;
    }
    b.step_total += ep.length;
    b.agent_total += (double)ep.length * b.n;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Exploitation side: shared recurrent Q net + state-conditioned monotone mixer
// ---------------------------------------------------------------------------

class ExploitNet {
 public:
  ExploitNet() = default;
  ExploitNet(const PolicyConfig& cfg, ParamStore& ps, RandomStream& rng) : cfg_(cfg) {
    fc_ = Mlp(ps, "agent.fc", {cfg.agent_input_dim(), cfg.hidden}, Activation::None, rng,
              Activation::Tanh);
    gru_ = GruCell(ps, "agent.gru", cfg.hidden, cfg.hidden, rng);
    head_ = Mlp(ps, "agent.head", {cfg.hidden, cfg.n_actions}, Activation::None, rng);
    hyper_w1_ = Mlp(ps, "mix.w1", {cfg.state_dim, cfg.hyper_hidden, cfg.mix_embed * cfg.n_agents},
                    Activation::Tanh, rng);
    hyper_b1_ = Mlp(ps, "mix.b1", {cfg.state_dim, cfg.mix_embed}, Activation::None, rng);
    hyper_w2_ = Mlp(ps, "mix.w2", {cfg.state_dim, cfg.hyper_hidden, cfg.mix_embed},
                    Activation::Tanh, rng);
    hyper_v_ = Mlp(ps, "mix.v", {cfg.state_dim, cfg.mix_embed, 1}, Activation::Tanh, rng);
  }

  struct StepOut {
    Ref q;  // [B x |U|]
    Ref h;  // [B x hidden]
  };

  StepOut q_step(Tape& t, const Ref& input, const Ref& h) const {
    Ref hx = gru_.forward(t, fc_.forward(t, input), h);
    return {head_.forward(t, hx), hx};
  }

  // q_taken: [E x n], state: [E x S] -> [E x 1]. Mixing weights pass through
  // an absolute value, so Q_tot is monotone in every agent's Q.
  Ref mix(Tape& t, const Ref& q_taken, const Ref& state) const {
    if (q_taken.cols != cfg_.n_agents) throw DimensionError("mix: agent count mismatch");
    if (state.cols != cfg_.state_dim || state.rows != q_taken.rows)
      throw DimensionError("mix: state shape mismatch");
    Ref w1 = abs_(hyper_w1_.forward(t, state));
    Ref hid = elu_(add(rowwise_weighted_sum(w1, q_taken, cfg_.mix_embed),
                       hyper_b1_.forward(t, state)));
    Ref w2 = abs_(hyper_w2_.forward(t, state));
    return add(rowwise_dot(w2, hid), hyper_v_.forward(t, state));
  }

 private:
  PolicyConfig cfg_;
  Mlp fc_;
  GruCell gru_;
  Mlp head_;
  Mlp hyper_w1_, hyper_b1_, hyper_w2_, hyper_v_;
};

// ---------------------------------------------------------------------------
// Exploration side: stochastic actor and value baseline, each with its own
// recurrent trunk over (o, u_prev, id) plus the global state at the head.
// ---------------------------------------------------------------------------

class ExploreNet {
 public:
  ExploreNet() = default;
  ExploreNet(const PolicyConfig& cfg, ParamStore& ps, const std::string& prefix, int out_dim,
             RandomStream& rng)
      : cfg_(cfg) {
    fc_ = Mlp(ps, prefix + ".fc", {cfg.agent_input_dim(), cfg.hidden}, Activation::None, rng,
              Activation::Tanh);
    gru_ = GruCell(ps, prefix + ".gru", cfg.hidden, cfg.hidden, rng);
    head_ = Mlp(ps, prefix + ".head", {cfg.hidden + cfg.state_dim, cfg.hidden, out_dim},
                Activation::Tanh, rng);
  }

  struct StepOut {
    Ref out;  // [B x out_dim]
    Ref h;    // [B x hidden]
  };

  // state: [B x S]; replaced by zeros when the config withholds it.
  StepOut step(Tape& t, const Ref& input, const Ref& h, const Ref& state) const {
    Ref hx = gru_.forward(t, fc_.forward(t, input), h);
    Ref s = cfg_.actor_sees_state
                ? state
                : t.constant(state.rows, state.cols,
                             std::vector<double>((size_t)state.rows * state.cols, 0.0));
    return {head_.forward(t, concat_cols({hx, s})), hx};
  }

 private:
  PolicyConfig cfg_;
  Mlp fc_;
  GruCell gru_;
  Mlp head_;
};

// ---------------------------------------------------------------------------
// Behavior policy: explore with probability alpha, otherwise greedy Q with a
// residual epsilon-greedy while epsilon > 0.
// ---------------------------------------------------------------------------

struct BehaviorChoice {
  int action = 0;
  bool explored = false;  // took the sampled-from-nu branch
};

// Draw order per agent: the alpha coin first; on the exploit branch an epsilon
// coin only while epsilon > 0, then a uniform action if it hits. Keeping the
// draw sequence fixed makes runs reproducible.
inline BehaviorChoice behavior_action(const CategoricalDist& nu, const std::vector<double>& q,
                                      double alpha, double epsilon, RandomStream& rng) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("behavior: alpha must be in [0, 1]");
  if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("behavior: epsilon must be in [0, 1]");
  BehaviorChoice c;
  if (rng.uniform01() < alpha) {
    c.action = categorical_sample(nu, rng);
    c.explored = true;
    return c;
  }
  if (epsilon > 0.0 && rng.uniform01() < epsilon) {
    c.action = rng.uniform_int((int)q.size());
    return c;
  }
  c.action = argmax_lowest(q);
  return c;
}

// ---------------------------------------------------------------------------
// Learner: owns the parameter stores, builds the losses, runs the optimizers
// ---------------------------------------------------------------------------

class PolicyLearner {
 public:
  PolicyLearner(const PolicyConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    cfg_.validate();
    RandomStream r0 = rng.split(101), r1 = rng.split(102), r2 = rng.split(103);
    exploit_ = ExploitNet(cfg_, zeta_, r0);
    exploit_target_ = ExploitNet(cfg_, zeta_target_, r0);  // values overwritten by sync below
    actor_ = ExploreNet(cfg_, xi_, "actor", cfg_.n_actions, r1);
    value_ = ExploreNet(cfg_, eta_, "value", 1, r2);
    opt_zeta_ = Adam({&zeta_}, cfg_.lr_exploit);
    opt_xi_ = Adam({&xi_}, cfg_.lr_explore);
    opt_eta_ = Adam({&eta_}, cfg_.lr_value);
    sync_target();
  }

  const PolicyConfig& config() const { return cfg_; }
  ParamStore& zeta() { return zeta_; }
  ParamStore& zeta_target() { return zeta_target_; }
  ParamStore& xi() { return xi_; }
  ParamStore& eta() { return eta_; }
  ExploitNet& exploit() { return exploit_; }
  ExploreNet& actor() { return actor_; }
  ExploreNet& value() { return value_; }

  void sync_target() { zeta_target_.copy_values_from(zeta_); }

  // ---- rollout interface --------------------------------------------------

  struct Hidden {
    std::vector<double> q;      // [n * hidden]
    std::vector<double> actor;  // [n * hidden]
  };

  Hidden make_hidden() const {
    Hidden h;
    h.q.assign((size_t)cfg_.n_agents * cfg_.hidden, 0.0);
    h.actor.assign((size_t)cfg_.n_agents * cfg_.hidden, 0.0);
    return h;
  }

  struct ActOut {
    std::vector<int> actions;
    std::vector<std::uint8_t> explored;
  };

  // One environment step for all agents. alpha == 0 skips the actor forward
  // entirely, so pure exploitation runs never touch xi.
  ActOut act(const std::vector<std::vector<double>>& obs, const std::vector<int>& prev_actions,
             const std::vector<double>& state, Hidden& h, double alpha, double epsilon,
             RandomStream& rng) const {
    const int n = cfg_.n_agents;
    Tape t;
    Ref qv = step_rows_q(t, obs, prev_actions, h);
    std::vector<CategoricalDist> nus(n);
    if (alpha > 0.0) {
      Ref logits = step_rows_actor(t, obs, prev_actions, state, h);
      const auto& lv = t.val(logits.id);
      for (int i = 0; i < n; ++i)
        nus[i].logits.assign(lv.begin() + (size_t)i * cfg_.n_actions,
                             lv.begin() + (size_t)(i + 1) * cfg_.n_actions);
    } else {
      for (int i = 0; i < n; ++i) nus[i].logits.assign(cfg_.n_actions, 0.0);
    }
    const auto& qvals = t.val(qv.id);
    ActOut out;
    out.actions.resize(n);
    out.explored.resize(n);
    for (int i = 0; i < n; ++i) {
      std::vector<double> qi(qvals.begin() + (size_t)i * cfg_.n_actions,
                             qvals.begin() + (size_t)(i + 1) * cfg_.n_actions);
      const BehaviorChoice c = behavior_action(nus[i], qi, alpha, epsilon, rng);
      out.actions[i] = c.action;
      out.explored[i] = c.explored ? 1 : 0;
    }
    return out;
  }

  // Greedy play; consumes no randomness and reads only zeta.
  std::vector<int> greedy_act(const std::vector<std::vector<double>>& obs,
                              const std::vector<int>& prev_actions, Hidden& h) const {
    Tape t;
    Ref qv = step_rows_q(t, obs, prev_actions, h);
    const auto& qvals = t.val(qv.id);
    std::vector<int> actions(cfg_.n_agents);
    for (int i = 0; i < cfg_.n_agents; ++i) {
      std::vector<double> qi(qvals.begin() + (size_t)i * cfg_.n_actions,
                             qvals.begin() + (size_t)(i + 1) * cfg_.n_actions);
      actions[i] = argmax_lowest(qi);
    }
    return actions;
  }

  // ---- TD loss ------------------------------------------------------------

  StagedBatch stage(const std::vector<const EpisodeBatch*>& eps) const {
    return stage_episodes(eps, cfg_);
  }

  // Mean over live steps of (y - Q_tot)^2, with y from the frozen copy:
  // y_t = r_t + gamma * max_u Q_tot(t+1) and y_t = r_t at terminal steps.
  Ref td_loss(Tape& t, const StagedBatch& b) const {
    const auto y = td_targets(b);
    const int rows = b.E * b.n;
    Ref h = zero_rows(t, rows);
    Ref acc;
    for (int s = 0; s < b.T; ++s) {
      const auto so = exploit_.q_step(t, t.constant(rows, b.in_dim, b.inputs[s]), h);
      h = so.h;
      Ref qa = gather_col_per_row(so.q, b.actions[s]);
      Ref qtot = exploit_.mix(t, reshape(qa, b.E, b.n), t.constant(b.E, b.state_dim, b.states[s]));
      Ref sq = square_(sub(qtot, t.constant(b.E, 1, y[s])));
      Ref masked = mul_const(sq, b.step_mask[s]);
      acc = acc.valid() ? add(acc, sum_all(masked)) : sum_all(masked);
    }
    Ref loss = scale(acc, 1.0 / b.step_total);
    if (!std::isfinite(t.scalar_val(loss))) throw NumericError("td loss: non-finite");
    return loss;
  }

  double td_step(const StagedBatch& b) {
    Tape t;
    Ref loss = td_loss(t, b);
    const double v = t.scalar_val(loss);
    zeta_.zero_grads();
    t.backward(loss);
    clip_grad_norm({&zeta_}, cfg_.grad_clip);
    opt_zeta_.step();
    return v;
  }

  // ---- exploration losses -------------------------------------------------

  // Value predictions per position, no gradients. T x [E*n].
  std::vector<std::vector<double>> value_values(const StagedBatch& b) const {
    Tape t;
    const int rows = b.E * b.n;
    Ref h = zero_rows(t, rows);
    std::vector<std::vector<double>> out(b.T);
    for (int s = 0; s < b.T; ++s) {
      const auto so = value_.step(t, t.constant(rows, b.in_dim, b.inputs[s]), h,
                                  t.constant(rows, b.state_dim, b.states_tiled[s]));
      h = so.h;
      out[s] = t.val(so.out.id);
    }
    return out;
  }

  // Score-function loss over live (t, agent) entries. The baseline enters as
  // a constant; with literal_advantage the weight is (r - V - beta), otherwise
  // (r - V - beta * (1 + log nu(u))) which is the exact gradient of the
  // entropy-regularized objective.
  Ref exploration_loss(Tape& t, const StagedBatch& b,
                       const std::vector<std::vector<double>>& r_int,
                       const std::vector<std::vector<double>>& v_baseline,
                       double* entropy_out = nullptr) const {
    if ((int)r_int.size() != b.T || (int)v_baseline.size() != b.T)
      throw DimensionError("exploration loss: per-step array length mismatch");
    const int rows = b.E * b.n;
    Ref h = zero_rows(t, rows);
    Ref acc;
    double ent_sum = 0.0;
    for (int s = 0; s < b.T; ++s) {
      const auto so = actor_.step(t, t.constant(rows, b.in_dim, b.inputs[s]), h,
                                  t.constant(rows, b.state_dim, b.states_tiled[s]));
      h = so.h;
      Ref lp = log_softmax_rows(so.out);
      Ref lpa = gather_col_per_row(lp, b.actions[s]);
      const auto& lpa_v = t.val(lpa.id);
      const auto& lp_v = t.val(lp.id);
      std::vector<double> w(rows, 0.0);
      for (int r = 0; r < rows; ++r) {
        if (b.agent_mask[s][r] == 0.0) continue;
        const double adv = cfg_.literal_advantage
                               ? r_int[s][r] - v_baseline[s][r] - cfg_.beta
                               : r_int[s][r] - v_baseline[s][r] -
                                     cfg_.beta * (1.0 + lpa_v[r]);
        w[r] = -adv / b.agent_total;
        double he = 0.0;
        for (int a = 0; a < cfg_.n_actions; ++a) {
          const double l = lp_v[(size_t)r * cfg_.n_actions + a];
          he -= std::exp(l) * l;
        }
        ent_sum += he;
      }
      Ref contrib = sum_all(mul_const(lpa, w));
      acc = acc.valid() ? add(acc, contrib) : contrib;
    }
    if (entropy_out != nullptr) *entropy_out = ent_sum / b.agent_total;
    if (!std::isfinite(t.scalar_val(acc))) throw NumericError("exploration loss: non-finite");
    return acc;
  }

  // Mean over live (t, agent) entries of (r_int - V)^2.
  Ref value_loss(Tape& t, const StagedBatch& b,
                 const std::vector<std::vector<double>>& r_int) const {
    if ((int)r_int.size() != b.T) throw DimensionError("value loss: per-step array mismatch");
    const int rows = b.E * b.n;
    Ref h = zero_rows(t, rows);
    Ref acc;
    for (int s = 0; s < b.T; ++s) {
      const auto so = value_.step(t, t.constant(rows, b.in_dim, b.inputs[s]), h,
                                  t.constant(rows, b.state_dim, b.states_tiled[s]));
      h = so.h;
      Ref sq = square_(sub(so.out, t.constant(rows, 1, r_int[s])));
      Ref masked = mul_const(sq, b.agent_mask[s]);
      acc = acc.valid() ? add(acc, sum_all(masked)) : sum_all(masked);
    }
    Ref loss = scale(acc, 1.0 / b.agent_total);
    if (!std::isfinite(t.scalar_val(loss))) throw NumericError("value loss: non-finite");
    return loss;
  }

  // Bootstrap targets from the frozen copy; plain forward pass, nothing kept.
  // y[t][e] = r + gamma * max_u Q_tot(t+1), or r alone at terminal steps.
  std::vector<std::vector<double>> td_targets(const StagedBatch& b) const {
    Tape t;
    const int rows = b.E * b.n;
    Ref h = zero_rows(t, rows);
    auto so = exploit_target_.q_step(t, t.constant(rows, b.in_dim, b.inputs[0]), h);
    h = so.h;
    std::vector<std::vector<double>> y(b.T, std::vector<double>(b.E, 0.0));
    for (int s = 0; s < b.T; ++s) {
      so = exploit_target_.q_step(t, t.constant(rows, b.in_dim, b.inputs[s + 1]), h);
      h = so.h;
      Ref qmax = rowwise_max(so.q);
      Ref qtot = exploit_target_.mix(t, reshape(qmax, b.E, b.n),
                                     t.constant(b.E, b.state_dim, b.states[s + 1]));
      const auto& qv = t.val(qtot.id);
      for (int e = 0; e < b.E; ++e)
        y[s][e] = b.rewards[s][e] + cfg_.gamma * b.not_done[s][e] * qv[e];
    }
    return y;
  }

  struct ExploreStepOut {
    double actor_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
  };

  // One actor step then one value step. The baseline used by the actor is the
  // value net's prediction before its own update.
  ExploreStepOut explore_step(const StagedBatch& b,
                              const std::vector<std::vector<double>>& r_int) {
    ExploreStepOut out;
    const auto v = value_values(b);
    {
      Tape t;
      Ref loss = exploration_loss(t, b, r_int, v, &out.entropy);
      out.actor_loss = t.scalar_val(loss);
      xi_.zero_grads();
      t.backward(loss);
      clip_grad_norm({&xi_}, cfg_.grad_clip);
      opt_xi_.step();
    }
    {
      Tape t;
      Ref loss = value_loss(t, b, r_int);
      out.value_loss = t.scalar_val(loss);
      eta_.zero_grads();
      t.backward(loss);
      clip_grad_norm({&eta_}, cfg_.grad_clip);
      opt_eta_.step();
    }
    return out;
  }

 private:
  Ref zero_rows(Tape& t, int rows) const {
    return t.constant(rows, cfg_.hidden, std::vector<double>((size_t)rows * cfg_.hidden, 0.0));
  }

  std::vector<double> assemble_rows(const std::vector<std::vector<double>>& obs,
                                    const std::vector<int>& prev_actions) const {
    const int n = cfg_.n_agents;
    if ((int)obs.size() != n || (int)prev_actions.size() != n)
      throw DimensionError("act: per-agent arrays must have n entries");
    std::vector<double> x((size_t)n * cfg_.agent_input_dim(), 0.0);
    for (int i = 0; i < n; ++i) {
      if ((int)obs[i].size() != cfg_.obs_dim) throw DimensionError("act: obs width mismatch");
      write_agent_input(x, (size_t)i * cfg_.agent_input_dim(), obs[i], prev_actions[i], i,
                        cfg_.n_actions, cfg_.n_agents);
    }
    return x;
  }

  Ref step_rows_q(Tape& t, const std::vector<std::vector<double>>& obs,
                  const std::vector<int>& prev_actions, Hidden& h) const {
    const int n = cfg_.n_agents;
    Ref hc = t.constant(n, cfg_.hidden, h.q);
    const auto so =
        exploit_.q_step(t, t.constant(n, cfg_.agent_input_dim(), assemble_rows(obs, prev_actions)),
                        hc);
    h.q = t.val(so.h.id);
    return so.q;
  }

  Ref step_rows_actor(Tape& t, const std::vector<std::vector<double>>& obs,
                      const std::vector<int>& prev_actions, const std::vector<double>& state,
                      Hidden& h) const {
    const int n = cfg_.n_agents;
    if ((int)state.size() != cfg_.state_dim) throw DimensionError("act: state width mismatch");
    std::vector<double> tiled((size_t)n * cfg_.state_dim);
    for (int i = 0; i < n; ++i)
      std::copy(state.begin(), state.end(), tiled.begin() + (size_t)i * cfg_.state_dim);
    Ref hc = t.constant(n, cfg_.hidden, h.actor);
    const auto so = actor_.step(
        t, t.constant(n, cfg_.agent_input_dim(), assemble_rows(obs, prev_actions)), hc,
        t.constant(n, cfg_.state_dim, tiled));
    h.actor = t.val(so.h.id);
    return so.out;
  }

  PolicyConfig cfg_;
  ParamStore zeta_, zeta_target_, xi_, eta_;
  ExploitNet exploit_, exploit_target_;
  ExploreNet actor_, value_;
  Adam opt_zeta_, opt_xi_, opt_eta_;
};

}  // namespace ices
