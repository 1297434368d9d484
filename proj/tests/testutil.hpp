#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "trajphen/tensor.hpp"

namespace trajphen::testutil {

// Max relative error between analytic gradients and central finite
// differences, with an absolute floor below which differences are ignored.
// `loss_fn` must be a pure function of the inputs' current data.
inline double finite_diff_max_rel_err(const std::function<Tensor()>& loss_fn,
                                      std::vector<Tensor> inputs, double eps = 1e-5,
                                      double abs_floor = 1e-7) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor loss = loss_fn();
  loss.backward();

  double worst = 0.0;
  for (Tensor& t : inputs) {
    const std::vector<double> analytic =
        t.has_grad() ? t.grad() : std::vector<double>(t.data().size(), 0.0);
    for (size_t i = 0; i < t.data().size(); ++i) {
      double saved = t.data()[i];
      double lp, lm;
      {
        NoGradGuard ng;
        t.data()[i] = saved + eps;
        lp = loss_fn().value();
        t.data()[i] = saved - eps;
        lm = loss_fn().value();
        t.data()[i] = saved;
      }
      double numeric = (lp - lm) / (2.0 * eps);
      double diff = std::fabs(analytic[i] - numeric);
      if (diff < abs_floor) continue;
      double denom = std::max(std::fabs(analytic[i]), std::fabs(numeric));
      if (denom < abs_floor) denom = abs_floor;
      worst = std::max(worst, diff / denom);
    }
  }
  return worst;
}

}  // namespace trajphen::testutil
