#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ices/env.hpp"
#include "ices/episode.hpp"
#include "ices/errors.hpp"
#include "ices/policies.hpp"
#include "ices/rng.hpp"
#include "ices/scaffolds.hpp"

namespace ices {

// Ablation/baseline wiring. "ices" is the full method; the others switch off
// or replace one piece at a time.
inline bool known_variant(const std::string& v) {
  return v == "ices" || v == "global_con" || v == "int_ext" || v == "no_s" || v == "no_maxent" ||
         v == "no_cvae" || v == "two_cvaes" || v == "qmix_baseline";
}

inline bool variant_uses_actor(const std::string& v) {
  return v != "int_ext" && v != "qmix_baseline";
}

inline bool variant_uses_scaffolds(const std::string& v) { return v != "qmix_baseline"; }

inline std::string scaffold_variant_name(const std::string& v) {
  if (v == "global_con" || v == "two_cvaes") return v;
  if (v == "no_cvae") return "euclidean";
  return "ices";
}

struct TrainerConfig {
  std::string variant = "ices";
  long step_max = 200000;
  int batch_size = 32;
  int buffer_capacity = 5000;
  int train_interval = 100;          // environment steps between update events
  int target_update_interval = 2000;
  int eval_interval = 2000;
  int eval_episodes = 20;
  double alpha_start = 0.1;
  double alpha_end = 0.05;           // reached at step_max (linear)
  double epsilon_start = 1.0;
  long epsilon_anneal_steps = 50000;  // linear to zero, then held at zero
  double scaffold_reward_clip = 10.0;
  double int_ext_weight = 1.0;
  PolicyConfig policy;       // env dims filled in by the trainer
  ScaffoldConfig scaffold;   // env dims filled in by the trainer

  void validate() const {
    if (!known_variant(variant)) throw ConfigError("trainer: unknown variant '" + variant + "'");
    if (step_max < 0) throw ConfigError("trainer: step_max must be non-negative");
    if (batch_size <= 0) throw ConfigError("trainer: batch_size must be positive");
    if (buffer_capacity < batch_size)
      throw ConfigError("trainer: buffer capacity smaller than batch size");
    if (train_interval <= 0 || target_update_interval <= 0 || eval_interval <= 0)
      throw ConfigError("trainer: intervals must be positive");
    if (eval_episodes <= 0) throw ConfigError("trainer: eval_episodes must be positive");
    if (alpha_start < 0.0 || alpha_start > 1.0 || alpha_end < 0.0 || alpha_end > 1.0)
      throw ConfigError("trainer: alpha must be in [0, 1]");
    if (alpha_end > alpha_start)
      throw ConfigError("trainer: alpha_end must not exceed alpha_start");
    if (epsilon_start < 0.0 || epsilon_start > 1.0)
      throw ConfigError("trainer: epsilon_start must be in [0, 1]");
    if (epsilon_anneal_steps < 0) throw ConfigError("trainer: epsilon anneal must be non-negative");
    if (scaffold_reward_clip < 0.0)
      throw ConfigError("trainer: scaffold reward clip must be non-negative");
  }
};

// alpha: linear start -> end over the whole run. epsilon: linear to zero over
// the annealing window, then removed entirely.
struct Schedules {
  double alpha_start = 0.0, alpha_end = 0.0;
  long alpha_steps = 0;
  double epsilon_start = 0.0;
  long epsilon_steps = 0;

  double alpha(long step) const {
    if (alpha_steps <= 0 || step >= alpha_steps) return alpha_end;
    return alpha_start + (alpha_end - alpha_start) * (double)step / (double)alpha_steps;
  }
  double epsilon(long step) const {
    if (epsilon_steps <= 0 || step >= epsilon_steps) return 0.0;
    return epsilon_start * (1.0 - (double)step / (double)epsilon_steps);
  }
};

struct MetricsRow {
  long step = 0;
  long episodes = 0;
  double test_return_mean = 0.0;
  double test_win_rate = 0.0;
  double loss_td = 0.0;
  double loss_elbo = 0.0;
  double loss_actor = 0.0;
  double loss_value = 0.0;
  double mean_r_int = 0.0;
  double actor_entropy = 0.0;
  double alpha = 0.0;
  double epsilon = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step,episodes,test_return_mean,test_win_rate,loss_td,loss_elbo,loss_actor,loss_value,"
    "mean_r_int,actor_entropy,alpha,epsilon";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = kMetricsHeader;
  out += '\n';
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.step);
    out += ',';
    out += std::to_string(r.episodes);
    for (double v : {r.test_return_mean, r.test_win_rate, r.loss_td, r.loss_elbo, r.loss_actor,
                     r.loss_value, r.mean_r_int, r.actor_entropy, r.alpha, r.epsilon}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

struct EvalMetrics {
  double return_mean = 0.0;
  double win_rate = 0.0;
};

// Greedy evaluation; touches only the exploitation parameters.
inline EvalMetrics evaluate(const PolicyLearner& pl, Env& env, int n_episodes,
                            RandomStream& rng) {
  if (n_episodes <= 0) throw DimensionError("evaluate: needs at least one episode");
  const EnvSpec& sp = env.spec();
  double total_return = 0.0;
  int wins = 0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    auto [s, obs] = env.reset(rng);
    (void)s;
    auto h = pl.make_hidden();
    std::vector<int> prev(sp.n_agents, -1);
    bool done = false;
    while (!done) {
      const auto a = pl.greedy_act(obs, prev, h);
      const StepResult r = env.step(a, rng);
      total_return += r.reward_ext;
      obs = r.next_obs;
      prev = a;
      done = r.done;
      if (r.done && r.won) ++wins;
    }
  }
  return {total_return / n_episodes, (double)wins / n_episodes};
}

// Folds per-agent scaffold values into the extrinsic rewards:
// r <- r + weight * sum_i r_int[i]. Used by the int_ext ablation.
inline void add_intrinsic_to_rewards(StagedBatch& b,
                                     const std::vector<std::vector<double>>& r_rows,
                                     double weight) {
  if ((int)r_rows.size() != b.T) throw DimensionError("reward mix: per-step array mismatch");
  for (int t = 0; t < b.T; ++t)
    for (int e = 0; e < b.E; ++e) {
      if (b.step_mask[t][e] == 0.0) continue;
      double sum = 0.0;
      for (int i = 0; i < b.n; ++i) sum += r_rows[t][e * b.n + i];
      b.rewards[t][e] += weight * sum;
    }
}

// Orchestrates the main loop: episodic collection with the behavior policy,
// replay storage, interleaved policy and scaffold updates, target syncs, and
// periodic greedy evaluation.
class Trainer {
 public:
  using EnvFactory = std::function<std::unique_ptr<Env>()>;
  using LogFn = std::function<void(const std::string&)>;

  Trainer(TrainerConfig cfg, EnvFactory factory, std::uint64_t seed, LogFn log = {})
      : cfg_(std::move(cfg)), factory_(std::move(factory)), log_(std::move(log)), master_(seed) {
    cfg_.validate();
    env_ = factory_();
    const EnvSpec& sp = env_->spec();
    sp.validate();

    // variant wiring
    if (cfg_.variant == "no_s") cfg_.policy.actor_sees_state = false;
    if (cfg_.variant == "no_maxent") cfg_.policy.beta = 0.0;
    if (!variant_uses_actor(cfg_.variant)) {
      cfg_.alpha_start = 0.0;
      cfg_.alpha_end = 0.0;
    }
    cfg_.policy.obs_dim = sp.obs_dim;
    cfg_.policy.state_dim = sp.state_dim;
    cfg_.policy.n_agents = sp.n_agents;
    cfg_.policy.n_actions = sp.n_actions;
    cfg_.scaffold.state_dim = sp.state_dim;
    cfg_.scaffold.n_agents = sp.n_agents;
    cfg_.scaffold.n_actions = sp.n_actions;
    cfg_.scaffold.variant = scaffold_variant_name(cfg_.variant);

    sched_.alpha_start = cfg_.alpha_start;
    sched_.alpha_end = cfg_.alpha_end;
    sched_.alpha_steps = cfg_.step_max;
    sched_.epsilon_start = cfg_.epsilon_start;
    sched_.epsilon_steps = cfg_.epsilon_anneal_steps;

    RandomStream pol_init = master_.split(11);
    learner_ = std::make_unique<PolicyLearner>(cfg_.policy, pol_init);
    if (variant_uses_scaffolds(cfg_.variant)) {
      RandomStream sc_init = master_.split(12);
      scaffold_ = std::make_unique<ScaffoldModel>(cfg_.scaffold, sc_init);
    }
    buffer_ = std::make_unique<ReplayBuffer>(cfg_.buffer_capacity);
    env_rng_ = master_.split(13);
    behavior_rng_ = master_.split(14);
    sample_rng_ = master_.split(15);
    scaffold_sample_rng_ = master_.split(16);
    scaffold_noise_rng_ = master_.split(17);
  }

  const TrainerConfig& config() const { return cfg_; }
  const Schedules& schedules() const { return sched_; }
  PolicyLearner& policies() { return *learner_; }
  ScaffoldModel* scaffolds() { return scaffold_.get(); }
  ReplayBuffer& buffer() { return *buffer_; }
  long env_steps() const { return step_; }
  long episodes_seen() const { return episodes_; }

  // Per-(position, agent-row) clipped scaffold values aligned with a staged
  // batch; recomputed from the current model, never cached at collection time.
  std::vector<std::vector<double>> intrinsic_rows(const StagedBatch& b) const {
    std::vector<std::vector<double>> r(b.T, std::vector<double>((size_t)b.E * b.n, 0.0));
    if (!scaffold_) return r;
    ScaffoldBatch scb;
    std::vector<std::pair<int, int>> where;  // (t, e)
    scb.u.assign(b.n, {});
    for (int t = 0; t < b.T; ++t)
      for (int e = 0; e < b.E; ++e) {
        if (b.step_mask[t][e] == 0.0) continue;
        scb.s.insert(scb.s.end(), b.states[t].begin() + (size_t)e * b.state_dim,
                     b.states[t].begin() + (size_t)(e + 1) * b.state_dim);
        scb.s_next.insert(scb.s_next.end(), b.states[t + 1].begin() + (size_t)e * b.state_dim,
                          b.states[t + 1].begin() + (size_t)(e + 1) * b.state_dim);
        for (int i = 0; i < b.n; ++i) scb.u[i].push_back(b.actions[t][e * b.n + i]);
        where.emplace_back(t, e);
      }
    scb.b = (int)where.size();
    if (scb.b == 0) return r;
    const auto vals = scaffold_->scaffold_values_all(scb);
    for (size_t k = 0; k < where.size(); ++k) {
      const auto [t, e] = where[k];
      for (int i = 0; i < b.n; ++i)
        r[t][e * b.n + i] =
            std::clamp(vals[i][k], 0.0, cfg_.scaffold_reward_clip);
    }
    return r;
  }

  // One policy pass: sample a batch, one TD step, then (when the variant has
  // an exploration actor) one actor and one value step on freshly computed
  // scaffold values. Scaffold parameters are read-only here.
  void train_policies_once() {
    if (!buffer_->can_sample(cfg_.batch_size)) {
      note("train skipped: buffer has " + std::to_string(buffer_->size()) + " of " +
           std::to_string(cfg_.batch_size) + " episodes");
      return;
    }
    const auto batch = buffer_->sample(cfg_.batch_size, sample_rng_);
    StagedBatch sb = learner_->stage(batch);
    std::vector<std::vector<double>> r_rows;
    if (scaffold_) {
      r_rows = intrinsic_rows(sb);
      double sum = 0.0;
      for (int t = 0; t < sb.T; ++t)
        for (int r = 0; r < sb.E * sb.n; ++r)
          if (sb.agent_mask[t][r] == 1.0) sum += r_rows[t][r];
      last_.mean_r_int = sum / sb.agent_total;
    }
    if (cfg_.variant == "int_ext") add_intrinsic_to_rewards(sb, r_rows, cfg_.int_ext_weight);
    last_.loss_td = learner_->td_step(sb);
    if (variant_uses_actor(cfg_.variant)) {
      const auto st = learner_->explore_step(sb, r_rows);
      last_.loss_actor = st.actor_loss;
      last_.loss_value = st.value_loss;
      last_.actor_entropy = st.entropy;
    }
  }

  // One scaffold pass on its own sampled batch.
  void train_scaffolds_once() {
    if (!scaffold_) return;
    if (!buffer_->can_sample(cfg_.batch_size)) {
      note("scaffold train skipped: buffer has " + std::to_string(buffer_->size()) + " of " +
           std::to_string(cfg_.batch_size) + " episodes");
      return;
    }
    const auto batch = buffer_->sample(cfg_.batch_size, scaffold_sample_rng_);
    ScaffoldBatch scb;
    scb.u.assign(cfg_.policy.n_agents, {});
    for (const EpisodeBatch* ep : batch)
      for (int t = 0; t < ep->length; ++t) {
        scb.s.insert(scb.s.end(), ep->states[t].begin(), ep->states[t].end());
        scb.s_next.insert(scb.s_next.end(), ep->states[t + 1].begin(), ep->states[t + 1].end());
        for (int i = 0; i < ep->n_agents; ++i) scb.u[i].push_back(ep->actions[t][i]);
        ++scb.b;
      }
    last_.loss_elbo = scaffold_->train_step(scb, scaffold_noise_rng_);
  }

  void train_event() {
    train_policies_once();
    train_scaffolds_once();
  }

  // Main loop. Episodes run to completion, so the final tally can overshoot
  // step_max by at most one episode.
  std::vector<MetricsRow> run() {
    std::vector<MetricsRow> rows;
    long processed = 0;
    while (step_ < cfg_.step_max) {
      collect_episode();
      for (long k = processed + 1; k <= step_; ++k) {
        if (k % cfg_.train_interval == 0) train_event();
        if (k % cfg_.target_update_interval == 0) learner_->sync_target();
        if (k % cfg_.eval_interval == 0) rows.push_back(eval_event(k));
      }
      processed = step_;
    }
    return rows;
  }

 private:
  void note(const std::string& msg) {
    if (log_) log_(msg);
  }

  void collect_episode() {
    const EnvSpec& sp = env_->spec();
    EpisodeBatch ep;
    ep.n_agents = sp.n_agents;
    auto [s, obs] = env_->reset(env_rng_);
    ep.states.push_back(s);
    ep.obs.push_back(obs);
    auto h = learner_->make_hidden();
    std::vector<int> prev(sp.n_agents, -1);
    bool done = false;
    while (!done) {
      const double a = sched_.alpha(step_);
      const double e = sched_.epsilon(step_);
      const auto act = learner_->act(obs, prev, s, h, a, e, behavior_rng_);
      const StepResult r = env_->step(act.actions, env_rng_);
      ep.actions.push_back(act.actions);
      ep.rewards_ext.push_back(r.reward_ext);
      ep.dones.push_back(r.done ? 1 : 0);
      ep.length += 1;
      s = r.next_state;
      obs = r.next_obs;
      ep.states.push_back(s);
      ep.obs.push_back(obs);
      prev = act.actions;
      done = r.done;
      ep.won = r.won;
      ++step_;
    }
    buffer_->add(std::move(ep));
    ++episodes_;
  }

  MetricsRow eval_event(long at_step) {
    auto env = factory_();
    RandomStream er = master_.split(9000 + eval_count_);
    ++eval_count_;
    const EvalMetrics m = evaluate(*learner_, *env, cfg_.eval_episodes, er);
    MetricsRow row;
    row.step = at_step;
    row.episodes = episodes_;
    row.test_return_mean = m.return_mean;
    row.test_win_rate = m.win_rate;
    row.loss_td = last_.loss_td;
    row.loss_elbo = last_.loss_elbo;
    row.loss_actor = last_.loss_actor;
    row.loss_value = last_.loss_value;
    row.mean_r_int = last_.mean_r_int;
    row.actor_entropy = last_.actor_entropy;
    row.alpha = sched_.alpha(at_step);
    row.epsilon = sched_.epsilon(at_step);
    return row;
  }

  struct LastLosses {
    double loss_td = 0.0, loss_elbo = 0.0, loss_actor = 0.0, loss_value = 0.0;
    double mean_r_int = 0.0, actor_entropy = 0.0;
  };

  TrainerConfig cfg_;
  EnvFactory factory_;
  LogFn log_;
  RandomStream master_;
  RandomStream env_rng_{0}, behavior_rng_{0}, sample_rng_{0};
  RandomStream scaffold_sample_rng_{0}, scaffold_noise_rng_{0};
  std::unique_ptr<Env> env_;
  std::unique_ptr<PolicyLearner> learner_;
  std::unique_ptr<ScaffoldModel> scaffold_;
  std::unique_ptr<ReplayBuffer> buffer_;
  Schedules sched_;
  LastLosses last_;
  long step_ = 0;
  long episodes_ = 0;
  long eval_count_ = 0;
};

}  // namespace ices
