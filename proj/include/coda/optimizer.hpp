#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "coda/errors.hpp"

namespace coda::opt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("adam: lr must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ConfigError("adam: betas must lie in [0, 1)");
    }
  }
};

/// First/second moment buffers for one parameter block.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Standard bias-corrected Adam update, applied in place.
inline void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw NumericalError("adam_step: shape mismatch");
  if (state.m.size() != params.size()) state = AdamState(params.size());
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

}  // namespace coda::opt
