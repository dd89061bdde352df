// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mmgenre/autograd.hpp"

namespace mmgenre {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares tape gradients of the scalar `f` against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps), element by element over `params`.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
/// `f` must rebuild its graph from the current parameter values on every
/// call; it runs once under a tape and 2·N times without one.
inline GradCheckResult grad_check_detailed(const std::function<Var<double>()>& f,
                                           std::vector<Var<double>> params, double eps = 1e-6) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Var<double> loss = f();
    if (loss.requires_grad()) tape.backward(loss);
  }
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Var<double>& p = params[pi];
    const Tensor<double> analytic = p.grad();
    Tensor<double>& value = p.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + eps;
      const double up = f().value().item();
      value[i] = orig - eps;
      const double down = f().value().item();
      value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (err > res.max_relative_error) res = {err, pi, i, a, numeric};
    }
  }
  return res;
}

inline double grad_check(const std::function<Var<double>()>& f, std::vector<Var<double>> params,
                         double eps = 1e-6) {
  return grad_check_detailed(f, std::move(params), eps).max_relative_error;
}

}  // namespace mmgenre
