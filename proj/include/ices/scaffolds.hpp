#pragma once

// Latent transition model measuring each agent's influence on the next
// state. Two encoder branches over (state, joint action) predict a latent
// next-state distribution: the full branch sees every agent's action, the
// counterfactual branch sees agent i's action replaced by a learned mask
// token. The gap between them, KL(full || counterfactual), is the intrinsic
// scaffold handed to the exploration policies. Both branches are trained as
// conditional VAEs against the observed next state through a shared decoder,
// so their latent spaces stay aligned.
//
// Variant modes:
//   ices       - per-agent mask, shared decoder (the default)
//   global_con - counterfactual masks all agents at once; every agent
//                receives the same team-level value
//   euclidean  - no latent comparison; value is the euclidean error of the
//                counterfactual reconstruction in state space
//   two_cvaes  - independent decoders and embeddings per branch, no sharing

#include <cmath>
#include <string>
#include <vector>

#include "ices/autodiff.hpp"
#include "ices/distributions.hpp"
#include "ices/nn.hpp"

namespace ices {

struct ScaffoldConfig {
  int state_dim = 0;
  int n_agents = 0;
  int n_actions = 0;
  int embed_dim = 4;
  int latent_dim = 8;
  int hidden = 64;
  std::string variant = "ices";  // ices | global_con | euclidean | two_cvaes
  double lr = 1e-4;
  double grad_clip = 0.1;

  bool valid_variant() const {
    return variant == "ices" || variant == "global_con" || variant == "euclidean" ||
           variant == "two_cvaes";
  }
};

// Transition batch, actions stored per agent: u[i][b] is agent i's action in
// transition b.
struct ScaffoldBatch {
  int b = 0;
  std::vector<double> s;                // [b x state_dim]
  std::vector<double> s_next;           // [b x state_dim]
  std::vector<std::vector<int>> u;      // [n_agents][b]
};

struct GaussianRefs {
  Ref mu, lv;
};

class ScaffoldModel {
 public:
  ScaffoldModel(ScaffoldConfig cfg, RandomStream& rng) : cfg_(cfg) {
    if (!cfg_.valid_variant())
      throw ConfigError("scaffolds: unknown variant '" + cfg_.variant + "'");
    const int in = cfg_.state_dim + cfg_.n_agents * cfg_.embed_dim;
    const int l2 = 2 * cfg_.latent_dim;
    embed_ = &ps_.add_uniform("embed", cfg_.n_actions + 1, cfg_.embed_dim, rng, 0.5);
    psi_trunk_ = Mlp(ps_, "psi.trunk", {in, cfg_.hidden}, Activation::Tanh, rng,
                     Activation::Tanh);
    psi_prior_ = Mlp(ps_, "psi.prior", {cfg_.hidden, l2}, Activation::None, rng);
    psi_post_ = Mlp(ps_, "psi.post", {cfg_.hidden + cfg_.state_dim, l2}, Activation::None, rng);
    phi_trunk_ = Mlp(ps_, "phi.trunk", {in, cfg_.hidden}, Activation::Tanh, rng,
                     Activation::Tanh);
    phi_prior_ = Mlp(ps_, "phi.prior", {cfg_.hidden, l2}, Activation::None, rng);
    phi_post_ = Mlp(ps_, "phi.post", {cfg_.hidden + cfg_.state_dim, l2}, Activation::None, rng);
    dec_ = Mlp(ps_, "dec", {cfg_.latent_dim, cfg_.hidden, cfg_.state_dim}, Activation::Tanh, rng);
    if (two_cvaes()) {
      embed_cf_ = &ps_.add_uniform("embed_cf", cfg_.n_actions + 1, cfg_.embed_dim, rng, 0.5);
      dec_cf_ = Mlp(ps_, "dec_cf", {cfg_.latent_dim, cfg_.hidden, cfg_.state_dim},
                    Activation::Tanh, rng);
    }
    opt_ = Adam({&ps_}, cfg_.lr);
  }

  const ScaffoldConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  int mask_index() const { return cfg_.n_actions; }
  bool two_cvaes() const { return cfg_.variant == "two_cvaes"; }
  bool global_con() const { return cfg_.variant == "global_con"; }
  // number of counterfactual terms in the objective per transition
  int cf_terms() const { return global_con() ? 1 : cfg_.n_agents; }

  // --- batched tape forwards -------------------------------------------

  GaussianRefs prior_full(Tape& t, const Ref& s, const std::vector<std::vector<int>>& u) const {
    Ref h = psi_trunk_.forward(t, encoder_input(t, s, u, -2, false));
    return split_gaussian(psi_prior_.forward(t, h));
  }

  // mask_agent in [0,n): that agent masked; mask_agent == -1: all masked.
  GaussianRefs prior_counterfactual(Tape& t, const Ref& s, const std::vector<std::vector<int>>& u,
                                    int mask_agent) const {
    Ref h = phi_trunk_.forward(t, encoder_input(t, s, u, mask_agent, two_cvaes()));
    return split_gaussian(phi_prior_.forward(t, h));
  }

  GaussianRefs posterior_full(Tape& t, const Ref& s, const std::vector<std::vector<int>>& u,
                              const Ref& s_next) const {
    Ref h = psi_trunk_.forward(t, encoder_input(t, s, u, -2, false));
    return split_gaussian(psi_post_.forward(t, concat_cols({h, s_next})));
  }

  GaussianRefs posterior_counterfactual(Tape& t, const Ref& s,
                                        const std::vector<std::vector<int>>& u, const Ref& s_next,
                                        int mask_agent) const {
    Ref h = phi_trunk_.forward(t, encoder_input(t, s, u, mask_agent, two_cvaes()));
    return split_gaussian(phi_post_.forward(t, concat_cols({h, s_next})));
  }

  Ref decode_mean(Tape& t, const Ref& z) const { return dec_.forward(t, z); }
  Ref decode_mean_cf(Tape& t, const Ref& z) const {
    return two_cvaes() ? dec_cf_.forward(t, z) : dec_.forward(t, z);
  }

  // --- objective --------------------------------------------------------

  // Noise layout: one standard-normal block [b x latent] for the full
  // branch, then one per counterfactual term.
  size_t elbo_noise_size(int b) const {
    return static_cast<size_t>(1 + cf_terms()) * b * cfg_.latent_dim;
  }
  std::vector<double> draw_elbo_noise(int b, RandomStream& rng) const {
    std::vector<double> n(elbo_noise_size(b));
    for (auto& v : n) v = rng.normal();
    return n;
  }

  // Negative evidence lower bound, averaged over the batch; counterfactual
  // terms averaged over their agent set. Reconstruction is a unit-variance
  // Gaussian likelihood, so each branch contributes half squared error plus
  // (state_dim/2) log 2pi.
  Ref elbo_loss(Tape& t, const ScaffoldBatch& batch, const std::vector<double>& noise) const {
    if (batch.b <= 0) throw DimensionError("elbo: empty batch");
    if (noise.size() != elbo_noise_size(batch.b))
      throw DimensionError("elbo: noise block size mismatch");
    const int B = batch.b, L = cfg_.latent_dim;
    Ref s = t.constant(B, cfg_.state_dim, batch.s);
    Ref sn = t.constant(B, cfg_.state_dim, batch.s_next);

    auto noise_block = [&](int k) {
      return std::vector<double>(noise.begin() + static_cast<size_t>(k) * B * L,
                                 noise.begin() + static_cast<size_t>(k + 1) * B * L);
    };
    auto recon = [&](const Ref& z, bool cf_branch) {
      Ref mean = cf_branch ? decode_mean_cf(t, z) : decode_mean(t, z);
      return scale(rowwise_sum(square_(sub(sn, mean))), 0.5);
    };

    // each branch shares its trunk between prior and posterior heads
    Ref h_full = psi_trunk_.forward(t, encoder_input(t, s, batch.u, -2, false));
    GaussianRefs p_full = split_gaussian(psi_prior_.forward(t, h_full));
    GaussianRefs q_full = split_gaussian(psi_post_.forward(t, concat_cols({h_full, sn})));
    Ref acc = add(kl_diag_gaussian_ref(q_full.mu, q_full.lv, p_full.mu, p_full.lv),
                  recon(reparameterize_ref(q_full.mu, q_full.lv, noise_block(0)), false));

    Ref cf_acc{};
    for (int k = 0; k < cf_terms(); ++k) {
      const int mask_agent = global_con() ? -1 : k;
      Ref h_cf = phi_trunk_.forward(t, encoder_input(t, s, batch.u, mask_agent, two_cvaes()));
      GaussianRefs p_cf = split_gaussian(phi_prior_.forward(t, h_cf));
      GaussianRefs q_cf = split_gaussian(phi_post_.forward(t, concat_cols({h_cf, sn})));
      Ref term = add(kl_diag_gaussian_ref(q_cf.mu, q_cf.lv, p_cf.mu, p_cf.lv),
                     recon(reparameterize_ref(q_cf.mu, q_cf.lv, noise_block(1 + k)), true));
      cf_acc = k == 0 ? term : add(cf_acc, term);
    }
    acc = add(acc, scale(cf_acc, 1.0 / cf_terms()));

    const double log2pi = std::log(2.0 * 3.14159265358979323846);
    Ref loss = add_scalar(mean_all(acc), cfg_.state_dim * log2pi);
    check_finite(loss, "elbo loss");
    return loss;
  }

  // One optimizer step on a fresh noise draw; returns the loss value.
  double train_step(const ScaffoldBatch& batch, RandomStream& rng) {
    ps_.zero_grads();
    Tape t;
    Ref loss = elbo_loss(t, batch, draw_elbo_noise(batch.b, rng));
    const double value = t.scalar_val(loss);
    t.backward(loss);
    clip_grad_norm({&ps_}, cfg_.grad_clip);
    opt_.step();
    return value;
  }

  // --- scaffold values --------------------------------------------------

  // KL(full prior || counterfactual prior) per transition for one agent.
  std::vector<double> intrinsic_scaffold_batch(const ScaffoldBatch& batch, int agent) const {
    Tape t;
    Ref s = t.constant(batch.b, cfg_.state_dim, batch.s);
    GaussianRefs p = prior_full(t, s, batch.u);
    GaussianRefs q = prior_counterfactual(t, s, batch.u, global_con() ? -1 : agent);
    Ref kl = kl_diag_gaussian_ref(p.mu, p.lv, q.mu, q.lv);
    return t.val(kl);
  }

  double intrinsic_scaffold(const std::vector<double>& s, const std::vector<int>& u,
                            int agent) const {
    ScaffoldBatch b = single(s, u, {});
    return intrinsic_scaffold_batch(b, agent)[0];
  }

  // Variant-dispatched per-agent values over a batch with known next states;
  // [n_agents][b]. This is what training consumes as r_int (unclipped).
  std::vector<std::vector<double>> scaffold_values_all(const ScaffoldBatch& batch) const {
    std::vector<std::vector<double>> out(cfg_.n_agents);
    if (cfg_.variant == "euclidean") {
      for (int i = 0; i < cfg_.n_agents; ++i) out[i] = euclidean_values(batch, i);
      return out;
    }
    if (global_con()) {
      std::vector<double> shared = intrinsic_scaffold_batch(batch, -1);
      for (int i = 0; i < cfg_.n_agents; ++i) out[i] = shared;
      return out;
    }
    for (int i = 0; i < cfg_.n_agents; ++i) out[i] = intrinsic_scaffold_batch(batch, i);
    return out;
  }

 private:
  std::vector<double> euclidean_values(const ScaffoldBatch& batch, int agent) const {
    Tape t;
    Ref s = t.constant(batch.b, cfg_.state_dim, batch.s);
    GaussianRefs p = prior_counterfactual(t, s, batch.u, agent);
    Ref pred = decode_mean_cf(t, p.mu);
    Ref err = rowwise_sum(square_(sub(t.constant(batch.b, cfg_.state_dim, batch.s_next), pred)));
    std::vector<double> v = t.val(err);
    for (auto& x : v) x = std::sqrt(x);
    return v;
  }

  ScaffoldBatch single(const std::vector<double>& s, const std::vector<int>& u,
                       const std::vector<double>& s_next) const {
    ScaffoldBatch b;
    b.b = 1;
    b.s = s;
    b.s_next = s_next;
    b.u.resize(cfg_.n_agents);
    for (int i = 0; i < cfg_.n_agents; ++i) b.u[i] = {u[i]};
    return b;
  }

  // Assembles [s, e(u_1), ..., e(u_n)] with the requested masking.
  // mask_agent: -2 none, -1 all, otherwise that agent.
  Ref encoder_input(Tape& t, const Ref& s, const std::vector<std::vector<int>>& u, int mask_agent,
                    bool use_cf_table) const {
    if (static_cast<int>(u.size()) != cfg_.n_agents)
      throw DimensionError("scaffolds: joint action agent count mismatch");
    Ref table = t.watch(use_cf_table ? *embed_cf_ : *embed_);
    std::vector<Ref> parts = {s};
    for (int i = 0; i < cfg_.n_agents; ++i) {
      std::vector<int> idx;
      if (mask_agent == -1 || mask_agent == i)
        idx.assign(u[i].size(), mask_index());
      else
        idx = u[i];
      for (int a : idx)
        if (a < 0 || a > cfg_.n_actions)
          throw DimensionError("scaffolds: action index out of range");
      parts.push_back(embed_rows(table, idx));
    }
    return concat_cols(parts);
  }

  GaussianRefs split_gaussian(const Ref& head_out) const {
    const int L = cfg_.latent_dim;
    return {slice_cols(head_out, 0, L), clamp_(slice_cols(head_out, L, 2 * L), kLogVarMin,
                                               kLogVarMax)};
  }

  ScaffoldConfig cfg_;
  ParamStore ps_;
  Tensor* embed_ = nullptr;
  Tensor* embed_cf_ = nullptr;
  Mlp psi_trunk_, psi_prior_, psi_post_;
  Mlp phi_trunk_, phi_prior_, phi_post_;
  Mlp dec_, dec_cf_;
  Adam opt_;
};

}  // namespace ices
