#pragma once

// Sparse-reward gridworld with distractor cells. Two (or more) agents walk a
// small grid; the team is paid +1 only when every agent stands on the goal
// cell in the same step. A few designated cells re-randomize their value
// every step no matter what anyone does, so novelty-hungry explorers can
// waste their budget staring at them.

#include <string>
#include <vector>

#include "ices/env.hpp"

namespace ices {

// Procedural layout: agents in the left corners, goal on the right wall at
// mid-height, noisy cells stacked in the column before the goal. The default
// layout below is make_corridor_layout(8, 4, 3).
inline std::vector<std::string> make_corridor_layout(int width, int height, int noisy_cells) {
  if (width < 3 || height < 2)
    throw ConfigError("corridor layout: grid must be at least 3x2");
  if (noisy_cells < 0 || noisy_cells > height)
    throw ConfigError("corridor layout: noisy cell count must be in [0, height]");
  std::vector<std::string> rows(height, std::string(width, '.'));
  rows[0][0] = '0';
  rows[height - 1][0] = '1';
  rows[(height - 1) / 2][width - 1] = 'G';
  for (int k = 0; k < noisy_cells; ++k) rows[k][width - 2] = 'N';
  return rows;
}

struct NoisyCorridorConfig {
  std::vector<std::string> layout = {
      "0.....N.",
      "......NG",
      "......N.",
      "1.......",
  };
  int episode_limit = 50;
  double step_penalty = 0.0;
};

class NoisyCorridor : public Env {
 public:
  // Layout characters: '#' wall, '.' free, 'G' goal, 'N' noisy cell,
  // digits are agent start positions in agent order.
  explicit NoisyCorridor(NoisyCorridorConfig cfg) : cfg_(std::move(cfg)) {
    parse_layout();
    spec_.n_agents = static_cast<int>(starts_.size());
    spec_.n_actions = 5;  // up, down, left, right, stay
    spec_.obs_dim = 9 * 4 + 2;
    spec_.state_dim = (spec_.n_agents + 1) * w_ * h_;
    spec_.episode_limit = cfg_.episode_limit;
    spec_.validate();
  }

  const EnvSpec& spec() const override { return spec_; }
  int width() const { return w_; }
  int height() const { return h_; }
  int goal_cell() const { return goal_; }
  const std::vector<int>& agent_cells() const { return pos_; }

  // Cells whose value resamples every step independently of all actions.
  const std::vector<std::uint8_t>& noisy_tv_mask() const { return noisy_; }

  ResetResult reset(RandomStream& rng) override {
    pos_ = starts_;
    steps_ = 0;
    done_ = false;
    resample_noise(rng);
    return {encode_state(), encode_obs_all()};
  }

  StepResult step(const std::vector<int>& joint_action, RandomStream& rng) override {
    if (done_) throw ProtocolError("corridor: step after episode end");
    check_joint_action(joint_action);
    for (size_t i = 0; i < pos_.size(); ++i) {
      const int target = move_target(pos_[i], joint_action[i]);
      if (!wall_[target]) pos_[i] = target;
    }
    resample_noise(rng);
    ++steps_;

    StepResult r;
    bool all_on_goal = true;
    for (int p : pos_)
      if (p != goal_) all_on_goal = false;
    r.won = all_on_goal;
    r.reward_ext = all_on_goal ? 1.0 : cfg_.step_penalty;
    r.done = r.won || steps_ >= cfg_.episode_limit;
    r.next_state = encode_state();
    r.next_obs = encode_obs_all();
    done_ = r.done;
    return r;
  }

  std::string ascii_dump() const {
    std::string out;
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const int c = y * w_ + x;
        char ch = wall_[c] ? '#' : (noisy_[c] ? 'N' : '.');
        if (c == goal_) ch = 'G';
        int count = 0, who = -1;
        for (size_t i = 0; i < pos_.size(); ++i)
          if (pos_[i] == c) {
            ++count;
            who = static_cast<int>(i);
          }
        if (count == 1) ch = static_cast<char>('0' + who);
        if (count > 1) ch = '*';
        out += ch;
      }
      out += '\n';
    }
    return out;
  }

 private:
  void parse_layout() {
    h_ = static_cast<int>(cfg_.layout.size());
    if (h_ == 0) throw ConfigError("corridor: empty layout");
    w_ = static_cast<int>(cfg_.layout[0].size());
    wall_.assign(w_ * h_, 0);
    noisy_.assign(w_ * h_, 0);
    goal_ = -1;
    std::vector<std::pair<int, int>> starts;  // (agent index, cell)
    for (int y = 0; y < h_; ++y) {
      const std::string& row = cfg_.layout[y];
      if (static_cast<int>(row.size()) != w_) throw ConfigError("corridor: ragged layout rows");
      for (int x = 0; x < w_; ++x) {
        const int c = y * w_ + x;
        const char ch = row[x];
        switch (ch) {
          case '#': wall_[c] = 1; break;
          case '.': break;
          case 'N': noisy_[c] = 1; break;
          case 'G':
            if (goal_ >= 0) throw ConfigError("corridor: multiple goal cells");
            goal_ = c;
            break;
          default:
            if (ch >= '0' && ch <= '9')
              starts.emplace_back(ch - '0', c);
            else
              throw ConfigError(std::string("corridor: unknown layout character '") + ch + "'");
        }
      }
    }
    if (goal_ < 0) throw ConfigError("corridor: no goal cell");
    if (starts.empty()) throw ConfigError("corridor: no agent start cells");
    starts_.assign(starts.size(), -1);
    for (auto& [idx, cell] : starts) {
      if (idx >= static_cast<int>(starts.size()) || starts_[idx] != -1)
        throw ConfigError("corridor: agent start indices must be 0..n-1, each once");
      starts_[idx] = cell;
    }
  }

  int move_target(int cell, int action) const {
    const int x = cell % w_, y = cell / w_;
    int nx = x, ny = y;
    switch (action) {
      case 0: ny = y - 1; break;
      case 1: ny = y + 1; break;
      case 2: nx = x - 1; break;
      case 3: nx = x + 1; break;
      default: break;  // stay
    }
    if (nx < 0 || nx >= w_ || ny < 0 || ny >= h_) return cell;
    return ny * w_ + nx;
  }

  void resample_noise(RandomStream& rng) {
    noise_value_.assign(w_ * h_, 0.0);
    for (int c = 0; c < w_ * h_; ++c)
      if (noisy_[c]) noise_value_[c] = rng.uniform01();
  }

  std::vector<double> encode_state() const {
    std::vector<double> s(spec_.state_dim, 0.0);
    for (size_t i = 0; i < pos_.size(); ++i) s[i * w_ * h_ + pos_[i]] = 1.0;
    const int off = static_cast<int>(pos_.size()) * w_ * h_;
    for (int c = 0; c < w_ * h_; ++c) s[off + c] = noise_value_[c];
    return s;
  }

  // 3x3 window around the agent, cell-major with channels
  // [wall, other-agent, goal, noise], then own coordinates scaled to [0,1].
  std::vector<double> encode_obs(int agent) const {
    std::vector<double> o;
    o.reserve(spec_.obs_dim);
    const int ax = pos_[agent] % w_, ay = pos_[agent] / w_;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = ax + dx, y = ay + dy;
        if (x < 0 || x >= w_ || y < 0 || y >= h_) {
          o.insert(o.end(), {1.0, 0.0, 0.0, 0.0});
          continue;
        }
        const int c = y * w_ + x;
        double other = 0.0;
        for (size_t i = 0; i < pos_.size(); ++i)
          if (static_cast<int>(i) != agent && pos_[i] == c) other = 1.0;
        o.insert(o.end(), {wall_[c] ? 1.0 : 0.0, other, c == goal_ ? 1.0 : 0.0, noise_value_[c]});
      }
    o.push_back(w_ > 1 ? static_cast<double>(ax) / (w_ - 1) : 0.0);
    o.push_back(h_ > 1 ? static_cast<double>(ay) / (h_ - 1) : 0.0);
    return o;
  }

  std::vector<std::vector<double>> encode_obs_all() const {
    std::vector<std::vector<double>> obs;
    for (size_t i = 0; i < pos_.size(); ++i) obs.push_back(encode_obs(static_cast<int>(i)));
    return obs;
  }

  NoisyCorridorConfig cfg_;
  EnvSpec spec_;
  int w_ = 0, h_ = 0, goal_ = -1;
  std::vector<std::uint8_t> wall_, noisy_;
  std::vector<int> starts_, pos_;
  std::vector<double> noise_value_;
  int steps_ = 0;
  bool done_ = false;
};

}  // namespace ices
