#pragma once

// Distribution math used by the latent transition models and the stochastic
// exploration policies: diagonal Gaussians with closed-form KL and
// reparameterized samples, and categorical distributions over actions.

#include <cmath>
#include <vector>

#include "ices/autodiff.hpp"
#include "ices/errors.hpp"
#include "ices/rng.hpp"

namespace ices {

constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian over the latent; log-variances are clamped on
// construction so downstream exp() stays in a sane range.
struct LatentGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;

  LatentGaussian() = default;
  LatentGaussian(std::vector<double> mu, std::vector<double> lv)
      : mean(std::move(mu)), log_var(std::move(lv)) {
    if (mean.size() != log_var.size())
      throw DimensionError("latent gaussian: mean/log_var length mismatch");
    for (auto& v : log_var) v = std::min(kLogVarMax, std::max(kLogVarMin, v));
  }

  int dim() const { return static_cast<int>(mean.size()); }
};

inline double kl_diag_gaussian(const LatentGaussian& p, const LatentGaussian& q) {
  if (p.dim() != q.dim()) throw DimensionError("kl_diag_gaussian: dimension mismatch");
  double kl = 0.0;
  for (int d = 0; d < p.dim(); ++d) {
    const double lvp = p.log_var[d], lvq = q.log_var[d];
    const double dm = p.mean[d] - q.mean[d];
    if (!std::isfinite(lvp) || !std::isfinite(lvq) || !std::isfinite(dm))
      throw NumericError("kl_diag_gaussian: non-finite input");
    kl += 0.5 * (lvq - lvp) + (std::exp(lvp) + dm * dm) / (2.0 * std::exp(lvq)) - 0.5;
  }
  if (!std::isfinite(kl)) throw NumericError("kl_diag_gaussian: non-finite result");
  return kl;
}

// Batched tape version over [B x D] mean/log_var blocks; returns [B x 1]
// per-row KL. Callers clamp log-variances at the network head, which also
// keeps this formula finite.
inline Ref kl_diag_gaussian_ref(const Ref& mu_p, const Ref& lv_p, const Ref& mu_q,
                                const Ref& lv_q) {
  Ref half_logdet = scale(sub(lv_q, lv_p), 0.5);
  Ref num = add(exp_(lv_p), square_(sub(mu_p, mu_q)));
  Ref term = scale(mul(num, exp_(neg(lv_q))), 0.5);
  return rowwise_sum(add_scalar(add(half_logdet, term), -0.5));
}

inline std::vector<double> reparameterize(const LatentGaussian& dist,
                                          const std::vector<double>& noise) {
  if (static_cast<int>(noise.size()) != dist.dim())
    throw DimensionError("reparameterize: noise length mismatch");
  std::vector<double> z(dist.dim());
  for (int d = 0; d < dist.dim(); ++d)
    z[d] = dist.mean[d] + std::exp(0.5 * dist.log_var[d]) * noise[d];
  return z;
}

// Tape version: z = mean + exp(log_var / 2) * noise, noise held constant.
inline Ref reparameterize_ref(const Ref& mu, const Ref& lv, const std::vector<double>& noise) {
  return add(mu, mul_const(exp_(scale(lv, 0.5)), noise));
}

struct CategoricalDist {
  std::vector<double> logits;

  CategoricalDist() = default;
  explicit CategoricalDist(std::vector<double> l) : logits(std::move(l)) {}
  int n() const { return static_cast<int>(logits.size()); }
};

inline std::vector<double> categorical_probs(const CategoricalDist& dist) {
  if (dist.logits.empty()) throw DegenerateDistributionError("categorical: no actions");
  double m = -std::numeric_limits<double>::infinity();
  for (double l : dist.logits) {
    if (std::isnan(l)) throw NumericError("categorical: NaN logit");
    m = std::max(m, l);
  }
  if (!std::isfinite(m))
    throw DegenerateDistributionError("categorical: no finite logit to normalize");
  std::vector<double> p(dist.logits.size());
  double z = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(dist.logits[i] - m);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

inline int categorical_sample(const CategoricalDist& dist, RandomStream& rng) {
  const auto p = categorical_probs(dist);
  const double u = rng.uniform01();
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;  // u landed in the rounding tail
}

inline double categorical_entropy(const CategoricalDist& dist) {
  const auto p = categorical_probs(dist);
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return std::max(0.0, h);
}

}  // namespace ices
