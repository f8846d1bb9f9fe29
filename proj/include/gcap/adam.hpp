#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gcap/errors.hpp"
#include "gcap/tensor.hpp"

namespace gcap {

struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update over `params`, then zeroes their gradients.
/// Moments are allocated on first use and must stay shape-congruent afterwards.
inline void adam_step(std::span<Tensor* const> params, AdamState& state) {
  if (state.m.empty() && state.v.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->numel(), 0.0);
      state.v.emplace_back(p->numel(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam: optimizer tracks " + std::to_string(state.m.size()) + " tensors but got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i]->numel() || state.v[i].size() != params[i]->numel()) {
      throw ShapeError("adam: moment size drifted for parameter " + std::to_string(i) + " of shape " +
                       to_string(params[i]->shape()));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(state.beta1, t);
  const double correct2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i]->values();
    auto grad = params[i]->grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / correct1;
      const double v_hat = v[j] / correct2;
      values[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    params[i]->zero_grad();
  }
}

}  // namespace gcap
