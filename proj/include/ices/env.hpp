#pragma once

// Dec-POMDP environment interface. Environments are deterministic functions
// of (internal state, joint action, rng draw); all stochasticity flows
// through the RandomStream passed per call so trajectories replay exactly.

#include <utility>
#include <vector>

#include "ices/errors.hpp"
#include "ices/rng.hpp"

namespace ices {

struct EnvSpec {
  int n_agents = 0;
  int n_actions = 0;
  int obs_dim = 0;
  int state_dim = 0;
  int episode_limit = 0;

  void validate() const {
    if (n_agents <= 0 || n_actions <= 0 || obs_dim <= 0 || state_dim <= 0 || episode_limit <= 0)
      throw ConfigError("env spec: all dimensions must be positive");
    if (obs_dim > state_dim)
      throw ConfigError("env spec: observations cannot be wider than the state");
  }
};

struct StepResult {
  std::vector<double> next_state;
  std::vector<std::vector<double>> next_obs;
  double reward_ext = 0.0;
  bool done = false;
  bool won = false;
};

using ResetResult = std::pair<std::vector<double>, std::vector<std::vector<double>>>;

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual ResetResult reset(RandomStream& rng) = 0;
  virtual StepResult step(const std::vector<int>& joint_action, RandomStream& rng) = 0;

 protected:
  void check_joint_action(const std::vector<int>& u) const {
    const EnvSpec& sp = spec();
    if (static_cast<int>(u.size()) != sp.n_agents)
      throw ProtocolError("step: joint action length does not match agent count");
    for (int a : u)
      if (a < 0 || a >= sp.n_actions) throw ProtocolError("step: action index out of range");
  }
};

}  // namespace ices
