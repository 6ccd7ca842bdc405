#pragma once

#include <string>
#include <vector>

#include "coda/autodiff.hpp"
#include "coda/errors.hpp"
#include "coda/tensor.hpp"

namespace coda::ode {

enum class Method { rk4, euler };

[[nodiscard]] inline const char* method_name(Method m) { return m == Method::rk4 ? "rk4" : "euler"; }

/**
 * @brief Classical 4th-order Runge-Kutta update.
 *
 * Generic over the state type: works on plain Tensor states and on recorded
 * ad::Value states, so the same stepper serves data generation and
 * backpropagation through the unrolled solver.
 */
template <class State, class Rhs>
[[nodiscard]] State rk4_step(const Rhs& rhs, const State& x, double dt) {
  if (!(dt > 0.0)) throw NumericalError("rk4_step: dt must be positive");
  const State k1 = rhs(x);
  const State k2 = rhs(axpy(x, 0.5 * dt, k1));
  const State k3 = rhs(axpy(x, 0.5 * dt, k2));
  const State k4 = rhs(axpy(x, dt, k3));
  State out = axpy(x, dt / 6.0, k1);
  out = axpy(out, dt / 3.0, k2);
  out = axpy(out, dt / 3.0, k3);
  out = axpy(out, dt / 6.0, k4);
  return out;
}

template <class State, class Rhs>
[[nodiscard]] State euler_step(const Rhs& rhs, const State& x, double dt) {
  if (!(dt > 0.0)) throw NumericalError("euler_step: dt must be positive");
  return axpy(x, dt, rhs(x));
}

template <class State, class Rhs>
[[nodiscard]] State step(Method method, const Rhs& rhs, const State& x, double dt) {
  return method == Method::rk4 ? rk4_step(rhs, x, dt) : euler_step(rhs, x, dt);
}

/**
 * @brief Fixed-step integration; returns the n_steps+1 state sequence
 * starting with x0. Stage failures are rethrown as IntegrationError
 * carrying the step index.
 */
template <class State, class Rhs>
[[nodiscard]] std::vector<State> integrate(const Rhs& rhs, const State& x0, double dt, int n_steps,
                                           Method method = Method::rk4) {
  if (n_steps < 0) throw NumericalError("integrate: n_steps must be >= 0");
  std::vector<State> states;
  states.reserve(static_cast<std::size_t>(n_steps) + 1);
  states.push_back(x0);
  for (int k = 0; k < n_steps; ++k) {
    try {
      states.push_back(step(method, rhs, states.back(), dt));
    } catch (const NumericalError& e) {
      throw IntegrationError(std::string("integration failed: ") + e.what(), k);
    }
  }
  return states;
}

/// Advance one observation interval of length dt using `substeps` solver steps.
template <class State, class Rhs>
[[nodiscard]] State advance(Method method, const Rhs& rhs, State x, double dt, int substeps) {
  const double h = dt / static_cast<double>(substeps);
  for (int s = 0; s < substeps; ++s) x = step(method, rhs, x, h);
  return x;
}

}  // namespace coda::ode
