#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "flowcast/common.hpp"

namespace flowcast {

struct AdamWConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct OptimizerState {
  AdamWConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit OptimizerState(AdamWConfig cfg = {}) : config(cfg) {}
};

/// One AdamW update with bias correction and decoupled weight decay:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
inline void adamw_step(OptimizerState& state, std::span<double> params,
                       std::span<const double> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " parameters vs " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state sized for " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adamw_step: non-finite gradient at parameter index " + std::to_string(i));
    }
  }
  ++state.step;
  const AdamWConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * params[i]);
  }
}

}  // namespace flowcast
