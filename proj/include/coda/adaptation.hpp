#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "coda/analysis_metrics.hpp"
#include "coda/autodiff.hpp"
#include "coda/hypernet.hpp"
#include "coda/linalg.hpp"
#include "coda/model.hpp"
#include "coda/optimizer.hpp"
#include "coda/training.hpp"

namespace coda::adaptation {

struct AdaptationConfig {
  opt::AdamConfig adam{1e-2, 0.9, 0.999, 1e-8};  // only d_xi scalars move
  int max_steps = 500;
  int patience = 50;
  double min_delta = 1e-12;
  hypernet::PenaltyConfig penalty{};
  training::LossOptions loss{};
};

struct AdaptationResult {
  std::string env_id;
  std::vector<double> xi;
  double final_loss = 0.0;  // trajectory loss at the adapted context
  int iterations = 0;
};

/**
 * @brief Context-only adaptation: with theta_c and W frozen, fit xi by
 * Adam on trajectory_loss(theta_c + W xi) + R(W, xi), starting from 0.
 */
[[nodiscard]] inline AdaptationResult adapt(const hypernet::HyperParams& trained,
                                            const model::ModelConfig& cfg,
                                            const systems::EnvironmentDataset& ds,
                                            const AdaptationConfig& ac) {
  if (ds.trajectories.empty()) throw ConfigError("adapt: dataset needs at least one trajectory");
  ac.adam.validate();

  AdaptationResult result;
  result.env_id = ds.env.id;
  result.xi.assign(trained.d_xi, 0.0);

  opt::AdamState state(trained.d_xi);
  double best = std::numeric_limits<double>::infinity();
  int wait = 0;

  const Tensor theta_c_t({trained.theta_c.size()}, trained.theta_c);
  const Tensor w_t({trained.theta_c.size(), trained.d_xi}, trained.w);

  for (int step = 0; step < ac.max_steps; ++step) {
    ad::Tape tape;
    ad::Value xi = tape.leaf(Tensor({trained.d_xi}, result.xi));
    ad::Value theta_c = tape.constant(theta_c_t);
    ad::Value w = tape.constant(w_t);
    ad::Value theta_e = hypernet::decode(tape, theta_c, w, xi);
    ad::Value loss;
    ad::Value obj;
    try {
      loss = training::trajectory_loss(tape, cfg, theta_e, ds, ac.loss);
      obj = tape.add(loss, hypernet::penalty(tape, w, xi, ac.penalty));
      tape.backward(obj);
    } catch (const NumericalError& e) {
      throw AdaptationError("adaptation diverged on env " + ds.env.id + ": " + e.what());
    } catch (const IntegrationError& e) {
      throw AdaptationError("adaptation diverged on env " + ds.env.id + ": " + e.what());
    }
    result.final_loss = tape.scalar_value(loss);
    result.iterations = step + 1;

    opt::adam_step(state, result.xi, tape.grad(xi), ac.adam);

    const double obj_v = tape.scalar_value(obj);
    if (obj_v < best - ac.min_delta) {
      best = obj_v;
      wait = 0;
    } else if (++wait >= ac.patience) {
      break;
    }
  }

  // Report the loss at the final context (the loop records pre-update values).
  {
    const auto theta_e = hypernet::decode(trained.theta_c, trained.w, result.xi);
    result.final_loss = training::trajectory_loss_value(cfg, theta_e, ds, ac.loss);
  }
  return result;
}

struct ClosedFormResult {
  std::vector<double> xi;
  double condition_number = 0.0;
};

/**
 * @brief Optimal context for the l2-relaxed problem:
 * xi* = -(Hbar + lambda' W^T W)^{-1} W^T grad L(theta_c), lambda' = 2 lambda,
 * with Hbar = W^T Hessian(L) W assembled column-wise from Hessian-vector
 * products, HVP(W e_j) ~ [grad L(theta_c + h W e_j) - grad L(theta_c - h W e_j)] / 2h.
 *
 * A cross-check oracle for analytic losses; uses only first-order gradients.
 */
[[nodiscard]] inline ClosedFormResult closed_form_context(const ad::Program& loss,
                                                          const std::vector<double>& theta_c,
                                                          const std::vector<double>& w,
                                                          std::size_t d_xi, double lambda) {
  const std::size_t d_theta = theta_c.size();
  if (w.size() != d_theta * d_xi) throw NumericalError("closed_form_context: W shape mismatch");

  const double h = 1e-4 * (1.0 + max_abs(theta_c));
  const std::vector<double> g0 = ad::grad(loss, theta_c);

  // Hbar column j = W^T HVP(W e_j).
  std::vector<double> h_bar(d_xi * d_xi, 0.0);
  for (std::size_t j = 0; j < d_xi; ++j) {
    std::vector<double> plus = theta_c;
    std::vector<double> minus = theta_c;
    for (std::size_t i = 0; i < d_theta; ++i) {
      const double wij = w[i * d_xi + j];
      plus[i] += h * wij;
      minus[i] -= h * wij;
    }
    const std::vector<double> gp = ad::grad(loss, plus);
    const std::vector<double> gm = ad::grad(loss, minus);
    std::vector<double> hvp(d_theta);
    for (std::size_t i = 0; i < d_theta; ++i) hvp[i] = (gp[i] - gm[i]) / (2.0 * h);
    const std::vector<double> col = linalg::matvec_t(w, d_theta, d_xi, hvp);
    for (std::size_t i = 0; i < d_xi; ++i) h_bar[i * d_xi + j] = col[i];
  }
  // Symmetrize (finite differences break symmetry at roundoff level).
  for (std::size_t i = 0; i < d_xi; ++i) {
    for (std::size_t j = i + 1; j < d_xi; ++j) {
      const double s = 0.5 * (h_bar[i * d_xi + j] + h_bar[j * d_xi + i]);
      h_bar[i * d_xi + j] = s;
      h_bar[j * d_xi + i] = s;
    }
  }

  const double lambda_prime = 2.0 * lambda;
  const std::vector<double> wtw = linalg::gram(w, d_theta, d_xi);
  for (std::size_t i = 0; i < d_xi * d_xi; ++i) h_bar[i] += lambda_prime * wtw[i];

  std::vector<double> rhs = linalg::matvec_t(w, d_theta, d_xi, g0);
  for (double& v : rhs) v = -v;

  const auto solved = linalg::solve_symmetric(h_bar, d_xi, rhs);
  if (!(solved.condition_number < 1e12)) {
    throw SingularHessianError("closed_form_context: system is numerically singular",
                               solved.condition_number);
  }
  return {solved.x, solved.condition_number};
}

struct ForecastMetrics {
  std::vector<double> per_trajectory_mse;
  std::vector<double> per_trajectory_mape;
  double mse = 0.0;
  double mape = 0.0;  // fraction, not percent
};

/**
 * @brief Forecast evaluation: pure rollout from each trajectory's initial
 * condition (teacher forcing off) against the stored states.
 */
[[nodiscard]] inline ForecastMetrics eval_forecast(const model::ModelConfig& cfg,
                                                   const std::vector<double>& theta_e,
                                                   const systems::EnvironmentDataset& ds,
                                                   const training::LossOptions& opts_in) {
  training::LossOptions opts = opts_in;
  opts.teacher_forcing_prob = 0.0;

  ForecastMetrics out;
  const std::size_t frame = shape_numel(ds.state_shape);
  for (const auto& traj : ds.trajectories) {
    systems::EnvironmentDataset single;
    single.env = ds.env;
    single.split = ds.split;
    single.dt = ds.dt;
    single.horizon = ds.horizon;
    single.state_shape = ds.state_shape;
    single.trajectories.push_back(traj);

    ad::Tape tape;
    ad::Value theta = tape.constant(Tensor({theta_e.size()}, theta_e));
    std::vector<ad::Value> rollout;
    ad::Value loss = training::trajectory_loss(tape, cfg, theta, single, opts, nullptr, &rollout);
    out.per_trajectory_mse.push_back(tape.scalar_value(loss));

    // Trajectory MAPE: mean over times of the vector MAPE at each frame.
    double mape_sum = 0.0;
    const std::size_t n_obs = rollout.size() - 1;
    for (std::size_t k = 1; k <= n_obs; ++k) {
      const auto& pred = tape.value(rollout[k]);
      const double* truth = traj.states.data.data() + k * frame;
      mape_sum += analysis::mape(pred.data(), truth, frame);
    }
    out.per_trajectory_mape.push_back(mape_sum / static_cast<double>(n_obs));
  }
  for (double v : out.per_trajectory_mse) out.mse += v;
  for (double v : out.per_trajectory_mape) out.mape += v;
  out.mse /= static_cast<double>(out.per_trajectory_mse.size());
  out.mape /= static_cast<double>(out.per_trajectory_mape.size());
  return out;
}

}  // namespace coda::adaptation
