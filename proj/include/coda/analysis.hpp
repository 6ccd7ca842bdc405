#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "coda/analysis_metrics.hpp"
#include "coda/autodiff.hpp"
#include "coda/linalg.hpp"
#include "coda/logging.hpp"
#include "coda/model.hpp"
#include "coda/rng.hpp"
#include "coda/systems.hpp"
#include "coda/training.hpp"

namespace coda::analysis {

// ---------------------------------------------------------------------------
// Parameter estimation from contexts
// ---------------------------------------------------------------------------

/**
 * @brief Affine map xi -> p fitted by least squares on training pairs
 * (xi^e, p^e); the linear context/parameter correspondence estimator.
 */
struct ParamEstimator {
  std::size_t d_xi = 0;
  std::size_t d_p = 0;
  std::vector<double> matrix;  // [d_p, d_xi] row-major
  std::vector<double> offset;  // [d_p]
  double train_residual = 0.0; // max abs residual over training pairs
};

[[nodiscard]] inline ParamEstimator fit_param_estimator(
    const std::vector<std::vector<double>>& contexts, const std::vector<std::vector<double>>& params) {
  if (contexts.size() != params.size() || contexts.empty()) {
    throw ConfigError("fit_param_estimator: need matching context/parameter pairs");
  }
  const std::size_t n = contexts.size();
  const std::size_t d_xi = contexts[0].size();
  const std::size_t d_p = params[0].size();
  if (n < d_xi + 1) throw DegenerateFitError("fit_param_estimator: too few environments");

  // Design matrix [xi 1] of shape [n, d_xi + 1]; one least-squares solve
  // per output coordinate.
  std::vector<double> design(n * (d_xi + 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d_xi; ++j) design[i * (d_xi + 1) + j] = contexts[i][j];
    design[i * (d_xi + 1) + d_xi] = 1.0;
  }

  ParamEstimator est;
  est.d_xi = d_xi;
  est.d_p = d_p;
  est.matrix.assign(d_p * d_xi, 0.0);
  est.offset.assign(d_p, 0.0);
  for (std::size_t k = 0; k < d_p; ++k) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = params[i][k];
    const std::vector<double> coef = linalg::least_squares(design, n, d_xi + 1, y);
    for (std::size_t j = 0; j < d_xi; ++j) est.matrix[k * d_xi + j] = coef[j];
    est.offset[k] = coef[d_xi];
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d_p; ++k) {
      double pred = est.offset[k];
      for (std::size_t j = 0; j < d_xi; ++j) pred += est.matrix[k * d_xi + j] * contexts[i][j];
      est.train_residual = std::max(est.train_residual, std::abs(pred - params[i][k]));
    }
  }
  return est;
}

[[nodiscard]] inline std::vector<double> estimate_params(const ParamEstimator& est,
                                                         const std::vector<double>& xi) {
  if (xi.size() != est.d_xi) throw ConfigError("estimate_params: context has wrong length");
  std::vector<double> p(est.d_p);
  for (std::size_t k = 0; k < est.d_p; ++k) {
    double v = est.offset[k];
    for (std::size_t j = 0; j < est.d_xi; ++j) v += est.matrix[k * est.d_xi + j] * xi[j];
    p[k] = v;
  }
  return p;
}

// ---------------------------------------------------------------------------
// 2-D convex hull membership (training environments live in the parameter
// plane; d_p = 2 for every in-scope system)
// ---------------------------------------------------------------------------

using Point2 = std::array<double, 2>;

[[nodiscard]] inline double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

/// Andrew monotone chain; returns counter-clockwise hull without repeats.
[[nodiscard]] inline std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Point2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

/**
 * @brief Point-in-convex-hull test via orientation signs (boundary counts
 * as inside). Collinear training grids fall back to bounding-box
 * membership with a logged warning.
 */
[[nodiscard]] inline bool point_in_hull(const std::vector<Point2>& hull, const Point2& p) {
  if (hull.size() < 3) {
    log_warn("convex hull is degenerate; falling back to bounding-box membership");
    double lo0 = std::numeric_limits<double>::infinity(), hi0 = -lo0;
    double lo1 = lo0, hi1 = -lo0;
    for (const auto& h : hull) {
      lo0 = std::min(lo0, h[0]);
      hi0 = std::max(hi0, h[0]);
      lo1 = std::min(lo1, h[1]);
      hi1 = std::max(hi1, h[1]);
    }
    return p[0] >= lo0 && p[0] <= hi0 && p[1] >= lo1 && p[1] <= hi1;
  }
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point2& a = hull[i];
    const Point2& b = hull[(i + 1) % hull.size()];
    if (cross(a, b, p) < -1e-12) return false;
  }
  return true;
}

struct EstimationRow {
  std::string env_id;
  std::vector<double> p_true;
  std::vector<double> p_hat;
  double mape = -1.0;  // fraction; -1 when truth unavailable
  bool in_hull = false;
};

[[nodiscard]] inline std::string estimation_csv(const std::vector<EstimationRow>& rows) {
  std::string csv = "env_id,p_true_0,p_true_1,p_hat_0,p_hat_1,mape,in_hull\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.env_id.c_str(),
                  r.p_true.size() > 0 ? r.p_true[0] : std::nan(""),
                  r.p_true.size() > 1 ? r.p_true[1] : std::nan(""),
                  r.p_hat.size() > 0 ? r.p_hat[0] : std::nan(""),
                  r.p_hat.size() > 1 ? r.p_hat[1] : std::nan(""), r.mape, r.in_hull ? 1 : 0);
    csv += buf;
  }
  return csv;
}

// ---------------------------------------------------------------------------
// Gradient subspace SVD
// ---------------------------------------------------------------------------

enum class LossKind { vector_field, trajectory };

/**
 * @brief Monte-Carlo vector-field loss for one synthetic environment:
 * mean over sampled states of ||f^e(x) - g_theta(x)||^2, states drawn
 * from the trajectory marginals induced by p(X0) (fixed seed).
 */
[[nodiscard]] inline ad::Program vector_field_loss_program(const model::ModelConfig& cfg,
                                                           const systems::SystemSpec& spec,
                                                           const systems::Environment& env,
                                                           std::size_t n_states = 1024,
                                                           std::uint64_t seed = 1234) {
  // Pool states from a handful of trajectories, then sample with replacement.
  const auto ds = systems::generate_dataset(spec, env, spec.kind == systems::SystemKind::gs ? 1 : 8,
                                            derive_seed(seed, {fnv1a64("vf-loss-pool")}));
  const std::size_t frame = shape_numel(ds.state_shape);
  std::vector<const double*> pool;
  for (const auto& traj : ds.trajectories) {
    for (std::size_t k = 0; k < traj.states.shape[0]; ++k) {
      pool.push_back(traj.states.data.data() + k * frame);
    }
  }
  Rng rng(derive_seed(seed, {fnv1a64("vf-loss-draw"), fnv1a64(env.id)}));
  Shape batch_shape = ds.state_shape;
  batch_shape.insert(batch_shape.begin(), n_states);
  Tensor states = Tensor::zeros(batch_shape);
  for (std::size_t i = 0; i < n_states; ++i) {
    const double* src = pool[rng.uniform_index(pool.size())];
    std::copy(src, src + frame, states.data.begin() + static_cast<std::ptrdiff_t>(i * frame));
  }
  // Targets: exact RHS at the sampled states.
  Tensor targets = Tensor::zeros(batch_shape);
  for (std::size_t i = 0; i < n_states; ++i) {
    Tensor x(ds.state_shape, std::vector<double>(
                                 states.data.begin() + static_cast<std::ptrdiff_t>(i * frame),
                                 states.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * frame)));
    const Tensor d = systems::rhs(spec, env.params, x);
    std::copy(d.data.begin(), d.data.end(),
              targets.data.begin() + static_cast<std::ptrdiff_t>(i * frame));
  }
  const std::size_t state_elems = frame;
  return [cfg, states, targets, state_elems](ad::Tape& tape, ad::Value theta) {
    ad::Value pred = model::forward(cfg, tape, theta, tape.constant(states));
    ad::Value m = tape.mse(pred, tape.constant(targets));
    // mse averages over batch and state dims; rescale to the per-state
    // squared-norm average.
    return tape.scale(m, static_cast<double>(state_elems));
  };
}

/// Per-environment gradient columns at theta_c for the chosen loss.
[[nodiscard]] inline std::vector<std::vector<double>> per_env_gradients(
    const std::vector<ad::Program>& losses, const std::vector<double>& theta_c) {
  std::vector<std::vector<double>> grads;
  grads.reserve(losses.size());
  for (const auto& loss : losses) grads.push_back(ad::grad(loss, theta_c));
  return grads;
}

struct GradientSvd {
  std::vector<double> singular_values;               // descending
  std::vector<std::vector<double>> directions;       // leading left singular vectors
};

/**
 * @brief Singular values of the d_theta x |E| matrix whose columns are the
 * per-environment loss gradients at theta_c.
 */
[[nodiscard]] inline GradientSvd gradient_svd(const std::vector<std::vector<double>>& grads,
                                              std::size_t n_directions = 0) {
  if (grads.size() < 2) throw ConfigError("gradient_svd: >= 2 environments required");
  const std::size_t d_theta = grads[0].size();
  const std::size_t n_env = grads.size();
  std::vector<double> mat(d_theta * n_env);
  for (std::size_t e = 0; e < n_env; ++e) {
    if (grads[e].size() != d_theta) throw ConfigError("gradient_svd: ragged gradient list");
    for (std::size_t i = 0; i < d_theta; ++i) mat[i * n_env + e] = grads[e][i];
  }
  GradientSvd out;
  out.singular_values = linalg::singular_values(mat, d_theta, n_env);
  if (n_directions > 0) {
    out.directions = linalg::left_singular_vectors(mat, d_theta, n_env, n_directions);
  }
  return out;
}

/// Columns minus one reference column (the difference construction).
[[nodiscard]] inline std::vector<std::vector<double>> gradient_differences(
    const std::vector<std::vector<double>>& grads, std::size_t reference = 0) {
  std::vector<std::vector<double>> out;
  for (std::size_t e = 0; e < grads.size(); ++e) {
    if (e == reference) continue;
    std::vector<double> d(grads[e].size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = grads[e][i] - grads[reference][i];
    out.push_back(std::move(d));
  }
  return out;
}

[[nodiscard]] inline std::string svd_csv(const std::vector<double>& singular_values) {
  std::string csv = "rank,sigma\n";
  char buf[64];
  for (std::size_t i = 0; i < singular_values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, singular_values[i]);
    csv += buf;
  }
  return csv;
}

// ---------------------------------------------------------------------------
// Loss landscapes
// ---------------------------------------------------------------------------

/**
 * @brief Loss over the 2-D grid theta_c + a d1 + b d2, a and b on
 * `resolution` points in [-extent, extent] (odd resolution so the center
 * cell sits exactly at theta_c). Blown-up cells record +inf.
 */
struct LandscapeGrid {
  int resolution = 0;
  double extent = 0.0;
  std::vector<double> coords;   // shared axis values
  std::vector<double> losses;   // row-major [resolution, resolution], a-major
  int argmin_a = 0;
  int argmin_b = 0;
  double min_loss = 0.0;
  double center_loss = 0.0;
};

[[nodiscard]] inline LandscapeGrid loss_landscape(
    const std::function<double(const std::vector<double>&)>& loss, const std::vector<double>& theta_c,
    const std::vector<double>& d1, const std::vector<double>& d2, double extent, int resolution) {
  if (resolution < 1 || resolution % 2 == 0) {
    throw ConfigError("loss_landscape: resolution must be odd and >= 1");
  }
  if (d1.size() != theta_c.size() || d2.size() != theta_c.size()) {
    throw ConfigError("loss_landscape: direction length mismatch");
  }
  if (resolution > 1) {
    // Directions must be linearly independent (angle bounded away from 0).
    const double n1 = linalg::norm2(d1);
    const double n2 = linalg::norm2(d2);
    if (n1 == 0.0 || n2 == 0.0 || std::abs(linalg::dot(d1, d2)) / (n1 * n2) > 1.0 - 1e-12) {
      throw ConfigError("loss_landscape: directions are linearly dependent");
    }
  }

  LandscapeGrid grid;
  grid.resolution = resolution;
  grid.extent = extent;
  for (int i = 0; i < resolution; ++i) {
    grid.coords.push_back(resolution == 1
                              ? 0.0
                              : -extent + 2.0 * extent * static_cast<double>(i) /
                                    static_cast<double>(resolution - 1));
  }

  grid.min_loss = std::numeric_limits<double>::infinity();
  std::vector<double> theta(theta_c.size());
  for (int ia = 0; ia < resolution; ++ia) {
    for (int ib = 0; ib < resolution; ++ib) {
      const double a = grid.coords[static_cast<std::size_t>(ia)];
      const double b = grid.coords[static_cast<std::size_t>(ib)];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] = theta_c[i] + a * d1[i] + b * d2[i];
      }
      double v;
      try {
        v = loss(theta);
      } catch (const IntegrationError&) {
        v = std::numeric_limits<double>::infinity();
      } catch (const NumericalError&) {
        v = std::numeric_limits<double>::infinity();
      }
      grid.losses.push_back(v);
      if (v < grid.min_loss) {
        grid.min_loss = v;
        grid.argmin_a = ia;
        grid.argmin_b = ib;
      }
    }
  }
  grid.center_loss = grid.losses[static_cast<std::size_t>((resolution / 2) * resolution +
                                                          resolution / 2)];
  return grid;
}

/// Long-form landscape CSV: a, b, env, loss.
[[nodiscard]] inline std::string landscape_csv(const std::vector<std::string>& env_ids,
                                               const std::vector<LandscapeGrid>& grids) {
  std::string csv = "a,b,env,loss\n";
  char buf[160];
  for (std::size_t e = 0; e < grids.size(); ++e) {
    const auto& g = grids[e];
    for (int ia = 0; ia < g.resolution; ++ia) {
      for (int ib = 0; ib < g.resolution; ++ib) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%s,%.17g\n",
                      g.coords[static_cast<std::size_t>(ia)],
                      g.coords[static_cast<std::size_t>(ib)], env_ids[e].c_str(),
                      g.losses[static_cast<std::size_t>(ia * g.resolution + ib)]);
        csv += buf;
      }
    }
  }
  return csv;
}

}  // namespace coda::analysis
