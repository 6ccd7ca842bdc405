#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coda/errors.hpp"
#include "coda/ode.hpp"
#include "coda/rng.hpp"
#include "coda/tensor.hpp"

namespace coda::systems {

enum class SystemKind { lv, go, gs };

[[nodiscard]] inline const char* kind_name(SystemKind k) {
  switch (k) {
    case SystemKind::lv: return "lv";
    case SystemKind::go: return "go";
    case SystemKind::gs: return "gs";
  }
  return "?";
}

[[nodiscard]] inline SystemKind kind_from_name(const std::string& name) {
  if (name == "lv") return SystemKind::lv;
  if (name == "go") return SystemKind::go;
  if (name == "gs") return SystemKind::gs;
  throw ConfigError("unknown system '" + name + "' (expected lv, go or gs)");
}

enum class Split { train, adapt, eval };

[[nodiscard]] inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::adapt: return "adapt";
    case Split::eval: return "eval";
  }
  return "?";
}

[[nodiscard]] inline Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "adapt") return Split::adapt;
  if (name == "eval") return Split::eval;
  throw ConfigError("unknown split '" + name + "'");
}

/// Predator-prey pair: dx = alpha x - beta x y, dy = delta x y - gamma y.
/// alpha and gamma are fixed across environments; (beta, delta) vary.
struct LvConstants {
  double alpha = 0.5;
  double gamma = 0.5;
};

/// Yeast glycolysis, 7 species. Fixed rates below; (k1, K1) vary.
struct GoConstants {
  double j0 = 2.5;
  double k2 = 6.0;
  double k3 = 16.0;
  double k4 = 100.0;
  double k5 = 1.28;
  double k6 = 12.0;
  double q = 4.0;
  double n_total = 1.0;
  double a_total = 4.0;
  double kappa = 13.0;
  double psi = 0.1;
  double k_out = 1.8;
};

/// Reaction-diffusion on a periodic grid. Diffusion fixed; (F, k) vary.
struct GsConstants {
  double du = 0.2097;
  double dv = 0.105;
};

// Per-species uniform initial-condition ranges for the glycolytic
// oscillator, transcribed from Daniels & Nemenman (2015), Table 2.
inline constexpr double kGoInitLo[7] = {0.15, 0.19, 0.04, 0.10, 0.08, 0.14, 0.05};
inline constexpr double kGoInitHi[7] = {1.60, 2.16, 0.20, 0.35, 0.30, 2.67, 0.10};

/**
 * @brief A dynamics family: equation kind, fixed constants, observation
 * grid, and generation step size.
 */
struct SystemSpec {
  SystemKind kind = SystemKind::lv;
  double dt = 0.5;           // observation step
  double horizon = 10.0;     // temporal horizon T
  double dt_internal = 0.1;  // ground-truth generation step
  std::size_t grid = 0;      // GS spatial grid side
  double dx = 0.0;           // GS spatial resolution
  LvConstants lv{};
  GoConstants go{};
  GsConstants gs{};

  [[nodiscard]] static SystemSpec make(SystemKind kind) {
    SystemSpec s;
    s.kind = kind;
    switch (kind) {
      case SystemKind::lv:
        s.dt = 0.5;
        s.horizon = 10.0;
        s.dt_internal = 0.1;
        break;
      case SystemKind::go:
        s.dt = 0.05;
        s.horizon = 1.0;
        s.dt_internal = 0.002;  // k4 = 100 makes 0.01 too coarse for step adequacy
        break;
      case SystemKind::gs:
        s.dt = 40.0;
        s.horizon = 400.0;
        s.dt_internal = 1.0;
        s.grid = 32;
        s.dx = 2.0;
        break;
    }
    return s;
  }

  [[nodiscard]] Shape state_shape() const {
    switch (kind) {
      case SystemKind::lv: return {2};
      case SystemKind::go: return {7};
      case SystemKind::gs: return {2, grid, grid};
    }
    return {};
  }

  [[nodiscard]] std::size_t param_dim() const { return 2; }

  /// Number of observation intervals T / dt.
  [[nodiscard]] int observation_steps() const {
    return static_cast<int>(std::lround(horizon / dt));
  }

  [[nodiscard]] int substeps_per_observation() const {
    return std::max(1, static_cast<int>(std::lround(dt / dt_internal)));
  }
};

/// One member of the family: identity plus its varying parameters p^e.
struct Environment {
  std::string id;
  std::vector<double> params;
};

struct Trajectory {
  std::string env_id;
  Tensor states;  // [n_obs + 1, state shape...]
  double dt = 0.0;
};

struct EnvironmentDataset {
  Environment env;
  Split split = Split::train;
  double dt = 0.0;
  double horizon = 0.0;
  Shape state_shape;
  std::vector<Trajectory> trajectories;

  [[nodiscard]] std::size_t n_trajectories() const { return trajectories.size(); }
  [[nodiscard]] int n_observation_steps() const {
    return static_cast<int>(trajectories.empty() ? 0 : trajectories.front().states.shape[0] - 1);
  }
};

namespace detail {

[[nodiscard]] inline Tensor rhs_lv(const LvConstants& c, double beta, double delta, const Tensor& x) {
  const std::size_t n = x.numel() / 2;  // supports [2] and [batch, 2]
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double prey = x.data[2 * i];
    const double predator = x.data[2 * i + 1];
    out.data[2 * i] = c.alpha * prey - beta * prey * predator;
    out.data[2 * i + 1] = delta * prey * predator - c.gamma * predator;
  }
  return out;
}

[[nodiscard]] inline Tensor rhs_go(const GoConstants& c, double k1, double big_k1, const Tensor& x) {
  const std::size_t n = x.numel() / 7;
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double* s = x.data.data() + 7 * i;
    double* d = out.data.data() + 7 * i;
    const double inhibition = 1.0 + std::pow(s[5] / big_k1, c.q);
    const double v1 = k1 * s[0] * s[5] / inhibition;
    const double v2 = c.k2 * s[1] * (c.n_total - s[4]);
    const double v3 = c.k3 * s[2] * (c.a_total - s[5]);
    const double v4 = c.k4 * s[3] * s[4];
    const double v6 = c.k6 * s[1] * s[4];
    const double exchange = c.kappa * (s[3] - s[6]);
    d[0] = c.j0 - v1;
    d[1] = 2.0 * v1 - v2 - v6;
    d[2] = v2 - v3;
    d[3] = v3 - v4 - exchange;
    d[4] = v2 - v4 - v6;
    d[5] = -2.0 * v1 + 2.0 * v3 - c.k5 * s[5];
    d[6] = c.psi * exchange - c.k_out * s[6];
  }
  return out;
}

[[nodiscard]] inline Tensor rhs_gs(const GsConstants& c, double f, double k, double dx, const Tensor& x) {
  if (x.shape.size() != 3 || x.shape[0] != 2) throw NumericalError("gs rhs: state must be [2, h, w]");
  const std::size_t h = x.shape[1];
  const std::size_t w = x.shape[2];
  const double inv_dx2 = 1.0 / (dx * dx);
  Tensor out = Tensor::zeros(x.shape);
  const double* u = x.data.data();
  const double* v = x.data.data() + h * w;
  double* du_out = out.data.data();
  double* dv_out = out.data.data() + h * w;
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t up = (i + h - 1) % h;
    const std::size_t down = (i + 1) % h;
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t left = (j + w - 1) % w;
      const std::size_t right = (j + 1) % w;
      const std::size_t idx = i * w + j;
      const double lap_u = (u[up * w + j] + u[down * w + j] + u[i * w + left] + u[i * w + right] -
                            4.0 * u[idx]) * inv_dx2;
      const double lap_v = (v[up * w + j] + v[down * w + j] + v[i * w + left] + v[i * w + right] -
                            4.0 * v[idx]) * inv_dx2;
      const double reaction = u[idx] * v[idx] * v[idx];
      du_out[idx] = c.du * lap_u - reaction + f * (1.0 - u[idx]);
      dv_out[idx] = c.dv * lap_v + reaction - (f + k) * v[idx];
    }
  }
  return out;
}

}  // namespace detail

/// Exact analytical right-hand side of the family at parameters p.
[[nodiscard]] inline Tensor rhs(const SystemSpec& spec, const std::vector<double>& p, const Tensor& x) {
  if (p.size() != spec.param_dim()) throw NumericalError("rhs: wrong parameter count");
  ensure_finite(x, "rhs input state");
  switch (spec.kind) {
    case SystemKind::lv: return detail::rhs_lv(spec.lv, p[0], p[1], x);
    case SystemKind::go: return detail::rhs_go(spec.go, p[0], p[1], x);
    case SystemKind::gs: return detail::rhs_gs(spec.gs, p[0], p[1], spec.dx, x);
  }
  throw NumericalError("rhs: unknown system");
}

/**
 * @brief Draw one initial condition from the system's p(X0).
 *
 * LV: Unif([1,3]^2). GO: per-species uniform ranges (constants above).
 * GS: (u, v) = (0, 1) everywhere except three 2x2 squares at uniformly
 * sampled top-left corners, where (u, v) = (0.95, 0.05); squares may
 * overlap and wrap around the periodic boundary.
 */
[[nodiscard]] inline Tensor sample_initial_condition(const SystemSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case SystemKind::lv: {
      Tensor x = Tensor::zeros({2});
      x.data[0] = rng.uniform(1.0, 3.0);
      x.data[1] = rng.uniform(1.0, 3.0);
      return x;
    }
    case SystemKind::go: {
      Tensor x = Tensor::zeros({7});
      for (std::size_t i = 0; i < 7; ++i) x.data[i] = rng.uniform(kGoInitLo[i], kGoInitHi[i]);
      return x;
    }
    case SystemKind::gs: {
      const std::size_t h = spec.grid;
      const std::size_t w = spec.grid;
      Tensor x = Tensor::zeros({2, h, w});
      double* u = x.data.data();
      double* v = x.data.data() + h * w;
      for (std::size_t i = 0; i < h * w; ++i) {
        u[i] = 0.0;
        v[i] = 1.0;
      }
      constexpr double eps = 0.05;
      for (int square = 0; square < 3; ++square) {
        const std::size_t top = rng.uniform_index(h);
        const std::size_t left = rng.uniform_index(w);
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = ((top + di) % h) * w + (left + dj) % w;
            u[idx] = 1.0 - eps;
            v[idx] = eps;
          }
        }
      }
      return x;
    }
  }
  throw NumericalError("sample_initial_condition: unknown system");
}

/**
 * @brief The published environment grids (cartesian product, row-major
 * over the listed value lists, listed order preserved).
 *
 * GS magnitudes follow the figure captions: F values are 10^-2-scale and
 * adaptation k is {0.059, 0.061}.
 */
[[nodiscard]] inline std::vector<Environment> environment_grid(const SystemSpec& spec, Split split) {
  if (split == Split::eval) throw ConfigError("environment_grid: split must be train or adapt");
  std::vector<double> first;
  std::vector<double> second;
  switch (spec.kind) {
    case SystemKind::lv:
      if (split == Split::train) {
        first = {0.5, 0.75, 1.0};   // beta
        second = {0.5, 0.75, 1.0};  // delta
      } else {
        first = {0.625, 1.125};
        second = {0.625, 1.125};
      }
      break;
    case SystemKind::go:
      if (split == Split::train) {
        first = {100.0, 90.0, 80.0};  // k1
        second = {1.0, 0.75, 0.5};    // K1
      } else {
        first = {85.0, 95.0};
        second = {0.625, 0.875};
      }
      break;
    case SystemKind::gs:
      if (split == Split::train) {
        first = {0.030, 0.039};   // F
        second = {0.058, 0.062};  // k
      } else {
        first = {0.033, 0.036};
        second = {0.059, 0.061};
      }
      break;
  }
  std::vector<Environment> envs;
  int index = 0;
  for (double a : first) {
    for (double b : second) {
      Environment e;
      e.id = std::string(kind_name(spec.kind)) + "-" + split_name(split) + "-" + std::to_string(index);
      e.params = {a, b};
      envs.push_back(std::move(e));
      ++index;
    }
  }
  return envs;
}

/**
 * @brief Simulate N trajectories of one environment with RK4 at the
 * spec's internal step, storing every observation-step frame.
 *
 * Sub-seeds mix the env id and trajectory index into the root seed, so
 * any single trajectory is reproducible in isolation.
 */
[[nodiscard]] inline EnvironmentDataset generate_dataset(const SystemSpec& spec, const Environment& env,
                                                         int n_trajectories, std::uint64_t seed,
                                                         Split split = Split::train) {
  if (n_trajectories < 1) throw ConfigError("generate_dataset: N must be >= 1");
  EnvironmentDataset ds;
  ds.env = env;
  ds.split = split;
  ds.dt = spec.dt;
  ds.horizon = spec.horizon;
  ds.state_shape = spec.state_shape();

  const int n_obs = spec.observation_steps();
  const int substeps = spec.substeps_per_observation();
  const auto field = [&](const Tensor& x) { return rhs(spec, env.params, x); };

  for (int t = 0; t < n_trajectories; ++t) {
    Rng rng(derive_seed(seed, {fnv1a64(env.id), static_cast<std::uint64_t>(t)}));
    Tensor state = sample_initial_condition(spec, rng);

    Shape traj_shape = ds.state_shape;
    traj_shape.insert(traj_shape.begin(), static_cast<std::size_t>(n_obs) + 1);
    Tensor frames = Tensor::zeros(traj_shape);
    const std::size_t frame_len = state.numel();
    std::copy(state.data.begin(), state.data.end(), frames.data.begin());

    for (int k = 0; k < n_obs; ++k) {
      try {
        state = ode::advance(ode::Method::rk4, field, state, spec.dt, substeps);
      } catch (const IntegrationError&) {
        throw IntegrationError("ground-truth generation blew up for env " + env.id, k);
      }
      ensure_finite(state, "generated state (env " + env.id + ")");
      std::copy(state.data.begin(), state.data.end(),
                frames.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * frame_len));
    }
    ds.trajectories.push_back(Trajectory{env.id, std::move(frames), spec.dt});
  }
  return ds;
}

/// First integral of the LV flow, V = delta x - gamma ln x + beta y - alpha ln y.
[[nodiscard]] inline double lv_first_integral(const LvConstants& c, double beta, double delta,
                                              double x, double y) {
  return delta * x - c.gamma * std::log(x) + beta * y - c.alpha * std::log(y);
}

}  // namespace coda::systems
