#pragma once

// Flat-sectioned key/value experiment configs: [env], [algo], [run]. Every
// key has a default; unknown keys and out-of-range values are rejected with
// the offending key path. Serialization is canonical, so equal configs
// serialize to equal text and parse/serialize round-trips are exact.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ices/errors.hpp"
#include "ices/matrix_game.hpp"
#include "ices/noisy_corridor.hpp"
#include "ices/trainer.hpp"

namespace ices {

struct EnvSection {
  std::string name;  // noisy_corridor | matrix_game
  int width = 8;
  int height = 4;
  int noisy_cells = 3;
  int episode_limit = 50;
  double step_penalty = 0.0;
};

struct ExperimentConfig {
  EnvSection env;
  TrainerConfig trainer;
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";

  void validate() const;
  std::string serialize() const;
};

namespace cfgdetail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline long parse_long(const std::string& v, const std::string& path) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw ConfigError("config: " + path + " is not an integer: '" + v + "'");
  return x;
}

inline int parse_int(const std::string& v, const std::string& path) {
  return (int)parse_long(v, path);
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& path) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw ConfigError("config: " + path + " is not a non-negative integer: '" + v + "'");
  return (std::uint64_t)x;
}

inline double parse_double(const std::string& v, const std::string& path) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    throw ConfigError("config: " + path + " is not a number: '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& v, const std::string& path) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: " + path + " must be 'true' or 'false', got '" + v + "'");
}

// shortest decimal that parses back to the same double
inline std::string exact_double(double v) {
  char buf[40];
  for (int prec : {10, 17}) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace cfgdetail

// Resolves the variant's forced settings so the echoed config shows what
// actually runs: no_maxent zeroes beta, the actor-free variants zero alpha.
inline void apply_variant_overrides(ExperimentConfig& c) {
  if (c.trainer.variant == "no_maxent") c.trainer.policy.beta = 0.0;
  if (!variant_uses_actor(c.trainer.variant)) {
    c.trainer.alpha_start = 0.0;
    c.trainer.alpha_end = 0.0;
  }
}

inline void ExperimentConfig::validate() const {
  if (env.name.empty()) throw ConfigError("config: env.name is missing");
  if (env.name != "noisy_corridor" && env.name != "matrix_game")
    throw ConfigError("config: env.name unknown environment '" + env.name + "'");
  if (env.episode_limit <= 0) throw ConfigError("config: env.episode_limit must be positive");
  if (env.name == "noisy_corridor") {
    if (env.width < 3 || env.height < 2)
      throw ConfigError("config: env.width/env.height grid too small (needs 3x2)");
    if (env.noisy_cells < 0 || env.noisy_cells > env.height)
      throw ConfigError("config: env.noisy_cells must be in [0, height]");
  }
  const PolicyConfig& p = trainer.policy;
  if (p.gamma <= 0.0 || p.gamma > 1.0)
    throw ConfigError("config: algo.gamma must be in (0, 1]");
  if (p.beta < 0.0) throw ConfigError("config: algo.beta must be non-negative");
  if (trainer.alpha_start < 0.0 || trainer.alpha_start > 1.0)
    throw ConfigError("config: algo.alpha_start must be in [0, 1]");
  if (trainer.alpha_end < 0.0 || trainer.alpha_end > 1.0)
    throw ConfigError("config: algo.alpha_end must be in [0, 1]");
  if (p.lr_exploit < 0.0 || p.lr_explore < 0.0 || p.lr_value < 0.0)
    throw ConfigError("config: algo learning rates must be non-negative");
  if (p.hidden <= 0 || p.mix_embed <= 0 || p.hyper_hidden <= 0)
    throw ConfigError("config: algo network widths must be positive");
  const ScaffoldConfig& s = trainer.scaffold;
  if (s.embed_dim <= 0 || s.latent_dim <= 0 || s.hidden <= 0)
    throw ConfigError("config: algo scaffold dimensions must be positive");
  if (s.lr < 0.0) throw ConfigError("config: algo.scaffold_lr must be non-negative");
  if (s.grad_clip < 0.0) throw ConfigError("config: algo.scaffold_clip must be non-negative");
  if (!known_variant(trainer.variant))
    throw ConfigError("config: run.variant unknown '" + trainer.variant + "'");
  if (out_dir.empty()) throw ConfigError("config: run.out_dir must not be empty");
  trainer.validate();
}

inline ExperimentConfig parse_config(const std::string& text) {
  using namespace cfgdetail;
  ExperimentConfig c;
  std::istringstream in(text);
  std::string raw, section;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = line.substr(1, line.size() - 2);
      if (section != "env" && section != "algo" && section != "run")
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown section [" +
                          section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key +
                        "' outside any section");
    const std::string path = section + "." + key;

    if (section == "env") {
      if (key == "name") c.env.name = val;
      else if (key == "width") c.env.width = parse_int(val, path);
      else if (key == "height") c.env.height = parse_int(val, path);
      else if (key == "noisy_cells") c.env.noisy_cells = parse_int(val, path);
      else if (key == "episode_limit") c.env.episode_limit = parse_int(val, path);
      else if (key == "step_penalty") c.env.step_penalty = parse_double(val, path);
      else
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown key " + path);
    } else if (section == "algo") {
      PolicyConfig& p = c.trainer.policy;
      ScaffoldConfig& s = c.trainer.scaffold;
      TrainerConfig& t = c.trainer;
      if (key == "hidden") p.hidden = parse_int(val, path);
      else if (key == "mix_embed") p.mix_embed = parse_int(val, path);
      else if (key == "hyper_hidden") p.hyper_hidden = parse_int(val, path);
      else if (key == "gamma") p.gamma = parse_double(val, path);
      else if (key == "lr_exploit") p.lr_exploit = parse_double(val, path);
      else if (key == "lr_explore") p.lr_explore = parse_double(val, path);
      else if (key == "lr_value") p.lr_value = parse_double(val, path);
      else if (key == "grad_clip") p.grad_clip = parse_double(val, path);
      else if (key == "beta") p.beta = parse_double(val, path);
      else if (key == "literal_advantage") p.literal_advantage = parse_bool(val, path);
      else if (key == "alpha_start") t.alpha_start = parse_double(val, path);
      else if (key == "alpha_end") t.alpha_end = parse_double(val, path);
      else if (key == "epsilon_start") t.epsilon_start = parse_double(val, path);
      else if (key == "epsilon_anneal_steps") t.epsilon_anneal_steps = parse_long(val, path);
      else if (key == "batch_size") t.batch_size = parse_int(val, path);
      else if (key == "buffer_capacity") t.buffer_capacity = parse_int(val, path);
      else if (key == "train_interval") t.train_interval = parse_int(val, path);
      else if (key == "target_update_interval") t.target_update_interval = parse_int(val, path);
      else if (key == "eval_interval") t.eval_interval = parse_int(val, path);
      else if (key == "eval_episodes") t.eval_episodes = parse_int(val, path);
      else if (key == "scaffold_reward_clip") t.scaffold_reward_clip = parse_double(val, path);
      else if (key == "int_ext_weight") t.int_ext_weight = parse_double(val, path);
      else if (key == "embed_dim") s.embed_dim = parse_int(val, path);
      else if (key == "latent_dim") s.latent_dim = parse_int(val, path);
      else if (key == "scaffold_hidden") s.hidden = parse_int(val, path);
      else if (key == "scaffold_lr") s.lr = parse_double(val, path);
      else if (key == "scaffold_clip") s.grad_clip = parse_double(val, path);
      else
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown key " + path);
    } else {  // run
      if (key == "variant") c.trainer.variant = val;
      else if (key == "seed") c.seed = parse_u64(val, path);
      else if (key == "step_max") c.trainer.step_max = parse_long(val, path);
      else if (key == "out_dir") c.out_dir = val;
      else
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown key " + path);
    }
  }
  apply_variant_overrides(c);
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

inline std::string ExperimentConfig::serialize() const {
  using cfgdetail::exact_double;
  std::ostringstream o;
  o << "[env]\n";
  o << "name = " << env.name << "\n";
  o << "width = " << env.width << "\n";
  o << "height = " << env.height << "\n";
  o << "noisy_cells = " << env.noisy_cells << "\n";
  o << "episode_limit = " << env.episode_limit << "\n";
  o << "step_penalty = " << exact_double(env.step_penalty) << "\n";
  o << "[algo]\n";
  const PolicyConfig& p = trainer.policy;
  const ScaffoldConfig& s = trainer.scaffold;
  o << "hidden = " << p.hidden << "\n";
  o << "mix_embed = " << p.mix_embed << "\n";
  o << "hyper_hidden = " << p.hyper_hidden << "\n";
  o << "gamma = " << exact_double(p.gamma) << "\n";
  o << "lr_exploit = " << exact_double(p.lr_exploit) << "\n";
  o << "lr_explore = " << exact_double(p.lr_explore) << "\n";
  o << "lr_value = " << exact_double(p.lr_value) << "\n";
  o << "grad_clip = " << exact_double(p.grad_clip) << "\n";
  o << "beta = " << exact_double(p.beta) << "\n";
  o << "literal_advantage = " << (p.literal_advantage ? "true" : "false") << "\n";
  o << "alpha_start = " << exact_double(trainer.alpha_start) << "\n";
  o << "alpha_end = " << exact_double(trainer.alpha_end) << "\n";
  o << "epsilon_start = " << exact_double(trainer.epsilon_start) << "\n";
  o << "epsilon_anneal_steps = " << trainer.epsilon_anneal_steps << "\n";
  o << "batch_size = " << trainer.batch_size << "\n";
  o << "buffer_capacity = " << trainer.buffer_capacity << "\n";
  o << "train_interval = " << trainer.train_interval << "\n";
  o << "target_update_interval = " << trainer.target_update_interval << "\n";
  o << "eval_interval = " << trainer.eval_interval << "\n";
  o << "eval_episodes = " << trainer.eval_episodes << "\n";
  o << "scaffold_reward_clip = " << exact_double(trainer.scaffold_reward_clip) << "\n";
  o << "int_ext_weight = " << exact_double(trainer.int_ext_weight) << "\n";
  o << "embed_dim = " << s.embed_dim << "\n";
  o << "latent_dim = " << s.latent_dim << "\n";
  o << "scaffold_hidden = " << s.hidden << "\n";
  o << "scaffold_lr = " << exact_double(s.lr) << "\n";
  o << "scaffold_clip = " << exact_double(s.grad_clip) << "\n";
  o << "[run]\n";
  o << "variant = " << trainer.variant << "\n";
  o << "seed = " << seed << "\n";
  o << "step_max = " << trainer.step_max << "\n";
  o << "out_dir = " << out_dir << "\n";
  return o.str();
}

inline Trainer::EnvFactory make_env_factory(const EnvSection& e) {
  if (e.name == "matrix_game")
    return [] { return std::make_unique<CooperativeMatrixGame>(shipped_matrix_game()); };
  NoisyCorridorConfig c;
  c.layout = make_corridor_layout(e.width, e.height, e.noisy_cells);
  c.episode_limit = e.episode_limit;
  c.step_penalty = e.step_penalty;
  return [c] { return std::make_unique<NoisyCorridor>(c); };
}

inline std::string config_hash(const ExperimentConfig& c) {
  const std::string s = c.serialize();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

}  // namespace ices
