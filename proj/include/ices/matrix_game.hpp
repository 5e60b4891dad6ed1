#pragma once

// Fully enumerable cooperative matrix game. The transition table is the
// ground truth that the latent scaffold model is measured against: the
// per-agent influence of an action on the next-state distribution can be
// computed exactly here by brute force.

#include <cmath>
#include <limits>
#include <vector>

#include "ices/env.hpp"

namespace ices {

// Transition/reward tables indexed by (state, flattened joint action).
struct MatrixGameTable {
  int n_states = 0;
  int n_agents = 0;
  int n_actions = 0;
  int start_state = 0;
  int win_state = -1;  // absorbing high-reward state; -1 for none
  int episode_limit = 10;
  std::vector<std::vector<std::vector<double>>> trans;  // [s][joint] -> prob over s'
  std::vector<std::vector<double>> reward;              // [s][joint] -> r

  int joint_count() const {
    int c = 1;
    for (int i = 0; i < n_agents; ++i) c *= n_actions;
    return c;
  }

  int flat(const std::vector<int>& u) const {
    int f = 0;
    for (int i = 0; i < n_agents; ++i) f = f * n_actions + u[i];
    return f;
  }

  void validate() const {
    if (n_states <= 0 || n_agents <= 0 || n_actions <= 0)
      throw ConfigError("matrix game: empty dimensions");
    if (start_state < 0 || start_state >= n_states)
      throw ConfigError("matrix game: start state out of range");
    if (static_cast<int>(trans.size()) != n_states ||
        static_cast<int>(reward.size()) != n_states)
      throw ConfigError("matrix game: table row count mismatch");
    const int jc = joint_count();
    for (int s = 0; s < n_states; ++s) {
      if (static_cast<int>(trans[s].size()) != jc || static_cast<int>(reward[s].size()) != jc)
        throw ConfigError("matrix game: joint action column count mismatch");
      for (int j = 0; j < jc; ++j) {
        double sum = 0.0;
        for (double p : trans[s][j]) {
          if (p < 0.0) throw ConfigError("matrix game: negative transition probability");
          sum += p;
        }
        if (static_cast<int>(trans[s][j].size()) != n_states)
          throw ConfigError("matrix game: probability vector length mismatch");
        if (std::fabs(sum - 1.0) > 1e-9)
          throw ConfigError("matrix game: transition row does not sum to 1");
      }
    }
  }
};

// KL between two distributions over the same finite support. Returns +inf
// when p puts mass where q has none.
inline double discrete_kl(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("discrete_kl: support size mismatch");
  double kl = 0.0;
  for (size_t x = 0; x < p.size(); ++x) {
    if (p[x] <= 0.0) continue;
    if (q[x] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[x] * std::log(p[x] / q[x]);
  }
  return std::max(0.0, kl);
}

// Marginal next-state distribution with agent i's action replaced by a
// uniform draw, everyone else's actions held fixed.
inline std::vector<double> counterfactual_next_dist(const MatrixGameTable& g, int s,
                                                    const std::vector<int>& u, int agent_i) {
  std::vector<double> mix(g.n_states, 0.0);
  std::vector<int> v = u;
  const double w = 1.0 / g.n_actions;
  for (int a = 0; a < g.n_actions; ++a) {
    v[agent_i] = a;
    const auto& row = g.trans[s][g.flat(v)];
    for (int x = 0; x < g.n_states; ++x) mix[x] += w * row[x];
  }
  return mix;
}

// Exact per-agent influence of the taken action on the transition: KL between
// the actual next-state distribution and the uniform-counterfactual mixture.
// +inf signals a support mismatch (cannot happen when the mixture includes
// the actual action, but crafted tables can trip it).
inline double oracle_scaffold(const MatrixGameTable& g, int s, const std::vector<int>& u,
                              int agent_i) {
  const auto& actual = g.trans[s][g.flat(u)];
  return discrete_kl(actual, counterfactual_next_dist(g, s, u, agent_i));
}

// The built-in 4-state, 2-agent, 3-action game. Designed so every kind of
// influence shows up somewhere:
//   state 0: agent 0 alone steers (0 -> advance, 1 -> stay, 2 -> coin flip);
//            agent 1 is irrelevant here.
//   state 1: advance to the absorbing win state 2 only on matching actions,
//            mismatch falls to state 3. Reward 1 on the match.
//   state 2: absorbing win, nothing matters.
//   state 3: dead end, resets to state 0 regardless of actions.
inline MatrixGameTable shipped_matrix_game() {
  MatrixGameTable g;
  g.n_states = 4;
  g.n_agents = 2;
  g.n_actions = 3;
  g.start_state = 0;
  g.win_state = 2;
  g.episode_limit = 10;
  const int jc = g.joint_count();
  g.trans.assign(4, std::vector<std::vector<double>>(jc, std::vector<double>(4, 0.0)));
  g.reward.assign(4, std::vector<double>(jc, 0.0));
  for (int a0 = 0; a0 < 3; ++a0)
    for (int a1 = 0; a1 < 3; ++a1) {
      const int j = g.flat({a0, a1});
      // state 0
      if (a0 == 0) {
        g.trans[0][j][1] = 1.0;
      } else if (a0 == 1) {
        g.trans[0][j][0] = 1.0;
      } else {
        g.trans[0][j][0] = 0.5;
        g.trans[0][j][1] = 0.5;
      }
      // state 1
      if (a0 == a1) {
        g.trans[1][j][2] = 1.0;
        g.reward[1][j] = 1.0;
      } else {
        g.trans[1][j][3] = 1.0;
      }
      // state 2 absorbing, state 3 resets
      g.trans[2][j][2] = 1.0;
      g.trans[3][j][0] = 1.0;
    }
  g.validate();
  return g;
}

// Environment wrapper; state and observations are the one-hot state index
// (both agents see everything in this game).
class CooperativeMatrixGame : public Env {
 public:
  explicit CooperativeMatrixGame(MatrixGameTable table) : table_(std::move(table)) {
    table_.validate();
    spec_.n_agents = table_.n_agents;
    spec_.n_actions = table_.n_actions;
    spec_.obs_dim = table_.n_states;
    spec_.state_dim = table_.n_states;
    spec_.episode_limit = table_.episode_limit;
    spec_.validate();
  }

  const EnvSpec& spec() const override { return spec_; }
  const MatrixGameTable& table() const { return table_; }
  int current_state() const { return state_; }

  ResetResult reset(RandomStream&) override {
    state_ = table_.start_state;
    steps_ = 0;
    done_ = false;
    return {encode(), obs_all()};
  }

  StepResult step(const std::vector<int>& joint_action, RandomStream& rng) override {
    if (done_) throw ProtocolError("matrix game: step after episode end");
    check_joint_action(joint_action);
    const int j = table_.flat(joint_action);
    const auto& row = table_.trans[state_][j];
    const double u = rng.uniform01();
    double acc = 0.0;
    int next = table_.n_states - 1;
    for (int x = 0; x < table_.n_states; ++x) {
      acc += row[x];
      if (u < acc) {
        next = x;
        break;
      }
    }
    StepResult r;
    r.reward_ext = table_.reward[state_][j];
    state_ = next;
    ++steps_;
    r.won = table_.win_state >= 0 && state_ == table_.win_state;
    r.done = r.won || steps_ >= table_.episode_limit;
    r.next_state = encode();
    r.next_obs = obs_all();
    done_ = r.done;
    return r;
  }

 private:
  std::vector<double> encode() const {
    std::vector<double> s(table_.n_states, 0.0);
    s[state_] = 1.0;
    return s;
  }
  std::vector<std::vector<double>> obs_all() const {
    return std::vector<std::vector<double>>(table_.n_agents, encode());
  }

  MatrixGameTable table_;
  EnvSpec spec_;
  int state_ = 0;
  int steps_ = 0;
  bool done_ = false;
};

}  // namespace ices
