#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gcap/errors.hpp"
#include "gcap/tape.hpp"
#include "gcap/tensor.hpp"

namespace gcap {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Builds a scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients against central differences.
///
/// Every coordinate of every tensor in `params` is perturbed by +-eps. The
/// relative error of one coordinate is |analytic - numeric| / max(1, |analytic|).
/// Parameter gradients are zeroed before and after the check.
inline GradCheckResult finite_diff_check(const LossBuilder& f, std::span<Tensor* const> params,
                                         double eps = 1e-5) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");
  auto evaluate = [&]() {
    Tape tape;
    const double v = f(tape).item();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is not finite");
    return v;
  };

  for (Tensor* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = f(tape);
    if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: loss is not finite");
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());
  for (Tensor* p : params) p->zero_grad();

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi]->values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + eps;
      const double up = evaluate();
      values[j] = saved - eps;
      const double down = evaluate();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][j];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++result.coordinates;
      if (err > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = err;
        result.worst_param = pi;
        result.worst_index = j;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace gcap
