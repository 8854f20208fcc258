#pragma once

#include <cmath>
#include <functional>

#include "msgcn/tensor.hpp"

namespace msgcn::testing {

// Central finite differences on a scalar function of one matrix entry.
// Relative error uses max(1, |analytic|) in the denominator.
inline double fd_max_rel_error(
    msgcn::Mat& x, const msgcn::Mat& analytic_grad,
    const std::function<double()>& eval, double h = 1e-4) {
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x.v[i];
    x.v[i] = keep + h;
    const double up = eval();
    x.v[i] = keep - h;
    const double down = eval();
    x.v[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double a = analytic_grad.v[i];
    const double rel = std::abs(fd - a) / std::max(1.0, std::abs(a));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace msgcn::testing
