#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "ices/errors.hpp"
#include "ices/rng.hpp"

namespace ices {

// One finished episode. States and observations carry T+1 entries so the
// bootstrap target at the final step has something to look at.
struct EpisodeBatch {
  int n_agents = 0;
  int length = 0;                                      // number of env steps T
  std::vector<std::vector<double>> states;             // T+1 x state_dim
  std::vector<std::vector<std::vector<double>>> obs;   // T+1 x n x obs_dim
  std::vector<std::vector<int>> actions;               // T x n
  std::vector<double> rewards_ext;                     // T
  std::vector<std::uint8_t> dones;                     // T, exactly one trailing 1
  bool won = false;

  void validate() const {
    if (n_agents <= 0 || length <= 0) throw DimensionError("episode: empty");
    if ((int)states.size() != length + 1 || (int)obs.size() != length + 1)
      throw DimensionError("episode: state/obs arrays must have length+1 entries");
    if ((int)actions.size() != length || (int)rewards_ext.size() != length ||
        (int)dones.size() != length)
      throw DimensionError("episode: per-step arrays must have length entries");
    for (const auto& o : obs)
      if ((int)o.size() != n_agents) throw DimensionError("episode: obs agent count");
    for (const auto& u : actions)
      if ((int)u.size() != n_agents) throw DimensionError("episode: action agent count");
    for (int t = 0; t < length; ++t) {
      const bool last = t == length - 1;
      if (dones[t] != (last ? 1 : 0))
        throw DimensionError("episode: done flag must be set exactly at the last step");
    }
  }
};

// FIFO store of whole episodes with uniform sampling without replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity = 5000) : capacity_(capacity) {
    if (capacity <= 0) throw ConfigError("replay capacity must be positive");
  }

  void add(EpisodeBatch ep) {
    ep.validate();
    if ((int)eps_.size() == capacity_) eps_.pop_front();
    eps_.push_back(std::move(ep));
    ++total_added_;
  }

  int size() const { return (int)eps_.size(); }
  long long total_added() const { return total_added_; }
  int capacity() const { return capacity_; }
  bool can_sample(int batch) const { return (int)eps_.size() >= batch; }
  const EpisodeBatch& at(int i) const { return eps_.at(i); }

  // Uniform without replacement; throws if fewer episodes than requested.
  std::vector<const EpisodeBatch*> sample(int batch, RandomStream& rng) const {
    if (batch <= 0) throw DimensionError("replay sample: batch must be positive");
    if (!can_sample(batch)) throw DimensionError("replay sample: not enough episodes");
    std::vector<int> idx(eps_.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = (int)i;
    // partial Fisher-Yates, first `batch` entries
    for (int i = 0; i < batch; ++i) {
      const int j = i + rng.uniform_int((int)idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    std::vector<const EpisodeBatch*> out;
    out.reserve(batch);
    for (int i = 0; i < batch; ++i) out.push_back(&eps_[idx[i]]);
    return out;
  }

 private:
  int capacity_;
  long long total_added_ = 0;
  std::deque<EpisodeBatch> eps_;
};

}  // namespace ices
