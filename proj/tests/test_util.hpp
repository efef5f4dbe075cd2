// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "nqg/tensor.hpp"

namespace nqg::test {

// Relative error with a floor on the denominator: values below the floor are
// compared on an absolute scale, since pure relative error on magnitudes at
// the round-off noise level is meaningless.
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central-difference check of d(loss)/d(param) for every element of `param`.
// `eval` recomputes the loss from the current parameter values, so it must
// read `param` afresh each call. Returns the max relative error across all
// elements; gradients smaller than the central-difference noise floor are
// held to an absolute tolerance instead.
inline double max_grad_rel_err(Tensor<double>& param,
                               const Tensor<double>& analytic,
                               const std::function<double()>& eval,
                               double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const double saved = param.data[i];
    param.data[i] = saved + step;
    const double up = eval();
    param.data[i] = saved - step;
    const double down = eval();
    param.data[i] = saved;
    const double fd = (up - down) / (2.0 * step);
    worst = std::max(worst, rel_err(analytic.data[i], fd, 1e-5));
  }
  return worst;
}

}  // namespace nqg::test
