#pragma once

#include "bustr/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace bustr::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares tape gradients against central differences for every value of
// every parameter. `loss` must build a fresh tape and return the scalar.
inline GradCheckResult grad_check(const nn::ParamList& params,
                                  const std::function<double(bool backprop)>& loss, double h = 1e-5,
                                  double floor = 1e-6) {
  nn::zero_grads(params);
  loss(true);
  GradCheckResult res;
  for (nn::Parameter* p : params) {
    if (p->frozen) continue;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss(false);
      x = saved - h;
      const double down = loss(false);
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
      const double rel = std::abs(numeric - analytic) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = p->name + "[" + std::to_string(i) + "]";
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace bustr::testing
