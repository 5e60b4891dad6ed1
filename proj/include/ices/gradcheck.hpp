#pragma once

// Finite-difference gradient verification. The generic engine perturbs one
// parameter coordinate at a time (central differences) and compares against
// the analytic gradient left in the stores by a backward pass. Component
// harnesses that wire up whole model losses live further down, added next to
// the models they exercise.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ices/autodiff.hpp"

namespace ices {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int coords_checked = 0;
  bool pass = false;
  std::string worst_param;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// loss_fn: evaluates the scalar loss at the current parameter values with no
// side effects on the stores. compute_grads: zeroes grads, runs one
// forward+backward, leaves gradients in the stores. Relative error per
// coordinate is |a - f| / max(|a|, |f|, floor).
inline GradCheckReport fd_check(const std::vector<ParamStore*>& groups,
                                const std::function<double()>& loss_fn,
                                const std::function<void()>& compute_grads,
                                double step = 1e-5, double tol = 1e-4,
                                double floor_ = 1e-3) {
  compute_grads();
  std::vector<std::vector<double>> analytic;
  for (ParamStore* g : groups)
    for (auto& [k, t] : g->items) {
      t.ensure_grad();
      analytic.push_back(t.grad);
    }

  GradCheckReport rep;
  size_t slot = 0;
  for (ParamStore* g : groups)
    for (auto& [k, t] : g->items) {
      const auto& a = analytic[slot];
      ++slot;
      for (size_t i = 0; i < t.data.size(); ++i) {
        const double saved = t.data[i];
        t.data[i] = saved + step;
        const double fp = loss_fn();
        t.data[i] = saved - step;
        const double fm = loss_fn();
        t.data[i] = saved;
        const double fd = (fp - fm) / (2.0 * step);
        const double rel =
            std::fabs(a[i] - fd) / std::max({std::fabs(a[i]), std::fabs(fd), floor_});
        ++rep.coords_checked;
        if (rel > rep.max_rel_err) {
          rep.max_rel_err = rel;
          rep.worst_param = k;
          rep.worst_index = static_cast<int>(i);
          rep.worst_analytic = a[i];
          rep.worst_numeric = fd;
        }
      }
    }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace ices
