#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "coda/autodiff.hpp"
#include "coda/hypernet.hpp"
#include "coda/model.hpp"
#include "coda/ode.hpp"
#include "coda/optimizer.hpp"
#include "coda/rng.hpp"
#include "coda/systems.hpp"

namespace coda::training {

struct LossOptions {
  ode::Method solver = ode::Method::rk4;
  int substeps = 1;                   // solver steps per observation interval
  double teacher_forcing_prob = 0.0;  // evaluation always uses 0 (pure rollout)
};

namespace detail {

/// All trajectories of one dataset as batch tensors: x0 [N, state...] and
/// one ground-truth batch per later observation time.
struct BatchedTrajectories {
  Tensor x0;
  std::vector<Tensor> truth;  // truth[k] holds states at time t_{k+1}
  std::size_t n_trajectories = 0;
};

[[nodiscard]] inline BatchedTrajectories batch_dataset(const systems::EnvironmentDataset& ds) {
  if (ds.trajectories.empty()) throw ConfigError("trajectory_loss: empty dataset");
  const std::size_t n = ds.trajectories.size();
  const std::size_t n_obs = static_cast<std::size_t>(ds.n_observation_steps());
  const std::size_t frame = shape_numel(ds.state_shape);

  Shape batch_shape = ds.state_shape;
  batch_shape.insert(batch_shape.begin(), n);

  BatchedTrajectories b;
  b.n_trajectories = n;
  b.x0 = Tensor::zeros(batch_shape);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& src = ds.trajectories[i].states.data;
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(frame),
              b.x0.data.begin() + static_cast<std::ptrdiff_t>(i * frame));
  }
  for (std::size_t k = 1; k <= n_obs; ++k) {
    Tensor t = Tensor::zeros(batch_shape);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& src = ds.trajectories[i].states.data;
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(k * frame),
                src.begin() + static_cast<std::ptrdiff_t>((k + 1) * frame),
                t.data.begin() + static_cast<std::ptrdiff_t>(i * frame));
    }
    b.truth.push_back(std::move(t));
  }
  return b;
}

}  // namespace detail

/**
 * @brief Trajectory-based MSE for an arbitrary recorded vector field:
 * roll out from x0 across the observation grid and average the squared
 * error over all trajectories, grid points and times.
 *
 * With probability teacher_forcing_prob (drawn per trajectory and
 * segment), an integration segment restarts from the ground-truth state
 * at the previous observation time (scheduled sampling). Also returns the
 * full rollout when `rollout` is given.
 */
template <class Field>
[[nodiscard]] ad::Value trajectory_loss_with_field(ad::Tape& tape, const Field& field,
                                                   const systems::EnvironmentDataset& ds,
                                                   const LossOptions& opts, Rng* rng = nullptr,
                                                   std::vector<ad::Value>* rollout = nullptr) {
  if (opts.teacher_forcing_prob < 0.0 || opts.teacher_forcing_prob > 1.0) {
    throw ConfigError("trajectory_loss: teacher_forcing_prob outside [0, 1]");
  }
  const auto batch = detail::batch_dataset(ds);

  ad::Value state = tape.constant(batch.x0);
  if (rollout) rollout->push_back(state);
  ad::Value total{};
  const std::size_t n_obs = batch.truth.size();
  for (std::size_t k = 0; k < n_obs; ++k) {
    ad::Value segment_start = state;
    if (rng != nullptr && opts.teacher_forcing_prob > 0.0 && k > 0) {
      std::vector<std::uint8_t> mask(batch.n_trajectories);
      bool any = false;
      bool all = true;
      for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng->bernoulli(opts.teacher_forcing_prob) ? 1 : 0;
        any = any || mask[i];
        all = all && mask[i];
      }
      if (all) {
        segment_start = tape.constant(batch.truth[k - 1]);
      } else if (any) {
        segment_start = tape.row_select(mask, tape.constant(batch.truth[k - 1]), state);
      }
    }
    try {
      state = ode::advance(opts.solver, field, segment_start, ds.dt, opts.substeps);
    } catch (const NumericalError& e) {
      throw IntegrationError("rollout failed for env " + ds.env.id + ": " + e.what(),
                             static_cast<int>(k));
    }
    if (rollout) rollout->push_back(state);
    ad::Value step_err = tape.mse(state, tape.constant(batch.truth[k]));
    total = k == 0 ? step_err : tape.add(total, step_err);
  }
  return tape.scale(total, 1.0 / static_cast<double>(n_obs));
}

/// Trajectory loss of the dynamics model at flat parameters theta;
/// differentiable w.r.t. theta.
[[nodiscard]] inline ad::Value trajectory_loss(ad::Tape& tape, const model::ModelConfig& cfg,
                                               ad::Value theta, const systems::EnvironmentDataset& ds,
                                               const LossOptions& opts, Rng* rng = nullptr,
                                               std::vector<ad::Value>* rollout = nullptr) {
  const auto params = model::slice_params(cfg, tape, theta);
  const auto field = [&tape, &cfg, &params](ad::Value state) {
    return model::forward(cfg, tape, params, state);
  };
  return trajectory_loss_with_field(tape, field, ds, opts, rng, rollout);
}

/// Plain scalar value of the trajectory loss at a fixed parameter vector.
[[nodiscard]] inline double trajectory_loss_value(const model::ModelConfig& cfg,
                                                  const std::vector<double>& theta,
                                                  const systems::EnvironmentDataset& ds,
                                                  const LossOptions& opts, Rng* rng = nullptr) {
  ad::Tape tape;
  ad::Value t = tape.constant(Tensor({theta.size()}, theta));
  return tape.scalar_value(trajectory_loss(tape, cfg, t, ds, opts, rng));
}

/**
 * @brief Per-environment term of the training objective and its gradients
 * with respect to (theta_c, W, xi^e).
 */
struct EnvGradients {
  double objective = 0.0;  // loss + penalty
  double loss = 0.0;
  double penalty = 0.0;
  std::vector<double> g_theta_c;
  std::vector<double> g_w;
  std::vector<double> g_xi;
};

[[nodiscard]] inline EnvGradients env_objective_gradients(
    const model::ModelConfig& cfg, const hypernet::HyperParams& hyper, std::size_t env_index,
    const systems::EnvironmentDataset& ds, const hypernet::PenaltyConfig& pen,
    const LossOptions& opts, Rng* rng) {
  const auto& [env_id, xi] = hyper.contexts[env_index];
  if (env_id != ds.env.id) throw ConfigError("context/dataset order mismatch at " + ds.env.id);

  // The l1 variant's row-norm term is handled by the proximal step in
  // train(), so it is excluded from the smooth gradient here.
  hypernet::PenaltyConfig smooth = pen;
  if (pen.variant == hypernet::PenaltyVariant::l1) smooth.lambda_omega = 0.0;

  ad::Tape tape;
  ad::Value theta_c = tape.leaf(Tensor({hyper.theta_c.size()}, hyper.theta_c));
  ad::Value w = tape.leaf(Tensor({hyper.theta_c.size(), hyper.d_xi}, hyper.w));
  ad::Value xi_v = tape.leaf(Tensor({hyper.d_xi}, xi));

  ad::Value theta_e = hypernet::decode(tape, theta_c, w, xi_v);
  ad::Value loss = trajectory_loss(tape, cfg, theta_e, ds, opts, rng);
  ad::Value pen_v = hypernet::penalty(tape, w, xi_v, smooth);
  ad::Value obj = tape.add(loss, pen_v);
  tape.backward(obj);

  EnvGradients out;
  out.loss = tape.scalar_value(loss);
  out.penalty = hypernet::penalty(hyper.w, hyper.d_xi, xi, pen);
  out.objective = out.loss + out.penalty;
  out.g_theta_c = tape.grad(theta_c);
  out.g_w = tape.grad(w);
  out.g_xi = tape.grad(xi_v);
  return out;
}

/**
 * @brief Proximal operator of step * sum_i ||W_{i,:}||_2: rows shrink
 * toward zero and snap exactly to zero below the threshold.
 */
inline void prox_group_lasso_rows(std::vector<double>& w, std::size_t d_xi, double step) {
  if (step <= 0.0) return;
  const std::size_t rows = w.size() / d_xi;
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = w.data() + i * d_xi;
    double sq = 0.0;
    for (std::size_t j = 0; j < d_xi; ++j) sq += row[j] * row[j];
    const double norm = std::sqrt(sq);
    if (norm <= step) {
      for (std::size_t j = 0; j < d_xi; ++j) row[j] = 0.0;
    } else {
      const double factor = 1.0 - step / norm;
      for (std::size_t j = 0; j < d_xi; ++j) row[j] *= factor;
    }
  }
}

/**
 * @brief Training objective sum_e [ L(theta_c + W xi^e, D^e) + R(W, xi^e) ]
 * evaluated at fixed parameters.
 */
[[nodiscard]] inline double coda_objective(const hypernet::HyperParams& hyper,
                                           const model::ModelConfig& cfg,
                                           const std::vector<systems::EnvironmentDataset>& datasets,
                                           const hypernet::PenaltyConfig& pen, const LossOptions& opts,
                                           Rng* rng = nullptr) {
  double total = 0.0;
  for (const auto& ds : datasets) {
    const auto* xi = hyper.find_context(ds.env.id);
    if (xi == nullptr) throw ConfigError("coda_objective: missing context for env " + ds.env.id);
    const auto theta_e = hypernet::decode(hyper.theta_c, hyper.w, *xi);
    total += trajectory_loss_value(cfg, theta_e, ds, opts, rng);
    total += hypernet::penalty(hyper.w, hyper.d_xi, *xi, pen);
  }
  return total;
}

struct TrainConfig {
  opt::AdamConfig adam{};
  hypernet::PenaltyConfig penalty{};
  int epochs = 4000;
  int patience = 50;        // early stopping on objective plateau
  double min_delta = 1e-9;
  double scheduled_sampling_tau = 25.0;
  ode::Method solver = ode::Method::rk4;
  int substeps = 1;
  std::uint64_t seed = 0;

  [[nodiscard]] double teacher_forcing_prob(int epoch) const {
    if (scheduled_sampling_tau <= 0.0) return 0.0;
    return std::exp(-static_cast<double>(epoch) / scheduled_sampling_tau);
  }
};

/// Per-system defaults from the reference hyperparameter tables.
[[nodiscard]] inline hypernet::PenaltyConfig default_penalty(systems::SystemKind kind,
                                                             hypernet::PenaltyVariant variant) {
  hypernet::PenaltyConfig pen;
  pen.variant = variant;
  switch (kind) {
    case systems::SystemKind::lv:
      pen.lambda_xi = 1e-4;
      pen.lambda_omega = variant == hypernet::PenaltyVariant::l1 ? 1e-6 : 1e-5;
      break;
    case systems::SystemKind::go:
      pen.lambda_xi = 1e-3;
      pen.lambda_omega = 1e-7;
      break;
    case systems::SystemKind::gs:
      pen.lambda_xi = 1e-2;
      pen.lambda_omega = 1e-5;
      break;
  }
  return pen;
}

struct EpochRecord {
  int epoch = 0;
  double objective = 0.0;
  std::vector<double> env_losses;
  double penalty = 0.0;
  double teacher_forcing_prob = 0.0;
};

struct TrainResult {
  hypernet::HyperParams hyper;
  std::vector<EpochRecord> history;
  int epochs_run = 0;
};

/**
 * @brief Joint full-batch Adam on pi = (theta_c, W, {xi^e}) with
 * exponential scheduled sampling and plateau early stopping.
 *
 * Gradients are accumulated in fixed (env order, trajectory index) order;
 * identical (seed, config) runs are bit-identical.
 */
[[nodiscard]] inline TrainResult train(const std::vector<systems::EnvironmentDataset>& datasets,
                                       const model::ModelConfig& cfg, hypernet::HyperParams init,
                                       const TrainConfig& tc) {
  if (datasets.empty()) throw ConfigError("train: at least one environment required");
  tc.adam.validate();
  tc.penalty.validate();
  init.validate();
  // Realign contexts with dataset order; gradients reduce in this order.
  std::vector<std::pair<std::string, std::vector<double>>> ordered;
  for (const auto& ds : datasets) {
    const auto* xi = init.find_context(ds.env.id);
    if (xi == nullptr) throw ConfigError("train: missing context for env " + ds.env.id);
    ordered.emplace_back(ds.env.id, *xi);
  }
  init.contexts = std::move(ordered);

  TrainResult result;
  result.hyper = std::move(init);
  auto& hyper = result.hyper;

  opt::AdamState st_theta(hyper.theta_c.size());
  opt::AdamState st_w(hyper.w.size());
  std::vector<opt::AdamState> st_xi(hyper.contexts.size(), opt::AdamState(hyper.d_xi));

  double best = std::numeric_limits<double>::infinity();
  int wait = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double tf_prob = tc.teacher_forcing_prob(epoch);
    LossOptions opts{tc.solver, tc.substeps, tf_prob};

    std::vector<double> g_theta(hyper.theta_c.size(), 0.0);
    std::vector<double> g_w(hyper.w.size(), 0.0);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.teacher_forcing_prob = tf_prob;

    std::vector<std::vector<double>> g_xi(hyper.contexts.size());
    for (std::size_t e = 0; e < datasets.size(); ++e) {
      Rng rng(derive_seed(tc.seed, {fnv1a64("teacher-forcing"), static_cast<std::uint64_t>(epoch),
                                    static_cast<std::uint64_t>(e)}));
      EnvGradients eg;
      try {
        eg = env_objective_gradients(cfg, hyper, e, datasets[e], tc.penalty, opts, &rng);
      } catch (const NumericalError& err) {
        throw TrainingError(std::string("training diverged: ") + err.what(), epoch);
      } catch (const IntegrationError& err) {
        throw TrainingError(std::string("training diverged: ") + err.what(), epoch);
      }
      rec.objective += eg.objective;
      rec.env_losses.push_back(eg.loss);
      rec.penalty += eg.penalty;
      for (std::size_t i = 0; i < g_theta.size(); ++i) g_theta[i] += eg.g_theta_c[i];
      for (std::size_t i = 0; i < g_w.size(); ++i) g_w[i] += eg.g_w[i];
      g_xi[e] = std::move(eg.g_xi);
    }
    if (!std::isfinite(rec.objective)) throw TrainingError("objective is non-finite", epoch);

    opt::adam_step(st_theta, hyper.theta_c, g_theta, tc.adam);
    opt::adam_step(st_w, hyper.w, g_w, tc.adam);
    if (tc.penalty.variant == hypernet::PenaltyVariant::l1) {
      prox_group_lasso_rows(hyper.w, hyper.d_xi, tc.adam.lr * tc.penalty.lambda_omega);
    }
    for (std::size_t e = 0; e < hyper.contexts.size(); ++e) {
      opt::adam_step(st_xi[e], hyper.contexts[e].second, g_xi[e], tc.adam);
    }

    result.history.push_back(std::move(rec));
    result.epochs_run = epoch + 1;

    const double obj = result.history.back().objective;
    if (obj < best - tc.min_delta) {
      best = obj;
      wait = 0;
    } else if (++wait >= tc.patience) {
      break;
    }
  }
  return result;
}

/**
 * @brief Plain ERM baseline: one shared theta minimizing the pooled
 * trajectory loss across all environments (no decoder, no penalty).
 */
struct ErmResult {
  std::vector<double> theta;
  std::vector<EpochRecord> history;
  int epochs_run = 0;
};

[[nodiscard]] inline ErmResult train_erm(const std::vector<systems::EnvironmentDataset>& datasets,
                                         const model::ModelConfig& cfg, const TrainConfig& tc,
                                         std::vector<double> theta_init) {
  if (datasets.empty()) throw ConfigError("train_erm: at least one environment required");
  tc.adam.validate();

  ErmResult result;
  result.theta = std::move(theta_init);
  opt::AdamState st(result.theta.size());

  double best = std::numeric_limits<double>::infinity();
  int wait = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double tf_prob = tc.teacher_forcing_prob(epoch);
    LossOptions opts{tc.solver, tc.substeps, tf_prob};

    std::vector<double> g(result.theta.size(), 0.0);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.teacher_forcing_prob = tf_prob;

    for (std::size_t e = 0; e < datasets.size(); ++e) {
      Rng rng(derive_seed(tc.seed, {fnv1a64("teacher-forcing"), static_cast<std::uint64_t>(epoch),
                                    static_cast<std::uint64_t>(e)}));
      ad::Tape tape;
      ad::Value theta = tape.leaf(Tensor({result.theta.size()}, result.theta));
      ad::Value loss;
      try {
        loss = trajectory_loss(tape, cfg, theta, datasets[e], opts, &rng);
        tape.backward(loss);
      } catch (const NumericalError& err) {
        throw TrainingError(std::string("ERM training diverged: ") + err.what(), epoch);
      } catch (const IntegrationError& err) {
        throw TrainingError(std::string("ERM training diverged: ") + err.what(), epoch);
      }
      rec.objective += tape.scalar_value(loss);
      rec.env_losses.push_back(tape.scalar_value(loss));
      const auto ge = tape.grad(theta);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += ge[i];
    }
    if (!std::isfinite(rec.objective)) throw TrainingError("ERM objective is non-finite", epoch);

    opt::adam_step(st, result.theta, g, tc.adam);
    result.history.push_back(std::move(rec));
    result.epochs_run = epoch + 1;

    const double obj = result.history.back().objective;
    if (obj < best - tc.min_delta) {
      best = obj;
      wait = 0;
    } else if (++wait >= tc.patience) {
      break;
    }
  }
  return result;
}

/// Training-log CSV: epoch, objective, per-env loss, penalty, tf prob.
[[nodiscard]] inline std::string history_csv(const std::vector<EpochRecord>& history,
                                             const std::vector<std::string>& env_ids) {
  std::string csv = "epoch,objective";
  for (const auto& id : env_ids) csv += ",loss_" + id;
  csv += ",penalty,teacher_forcing_prob\n";
  char buf[64];
  for (const auto& rec : history) {
    csv += std::to_string(rec.epoch);
    std::snprintf(buf, sizeof(buf), ",%.17g", rec.objective);
    csv += buf;
    for (double v : rec.env_losses) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      csv += buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", rec.penalty, rec.teacher_forcing_prob);
    csv += buf;
    csv += "\n";
  }
  return csv;
}

}  // namespace coda::training
