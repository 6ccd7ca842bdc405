#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "coda/autodiff.hpp"
#include "coda/errors.hpp"
#include "coda/linalg.hpp"
#include "coda/rng.hpp"

namespace coda::hypernet {

inline constexpr std::size_t kMaxContextDim = 16;

/**
 * @brief Trainable state of the framework: shared parameters theta_c, the
 * linear decoder W (d_theta x d_xi, row-major), and one low-dimensional
 * context per environment (insertion order preserved for determinism).
 */
struct HyperParams {
  std::vector<double> theta_c;
  std::vector<double> w;
  std::size_t d_xi = 0;
  std::vector<std::pair<std::string, std::vector<double>>> contexts;

  [[nodiscard]] std::size_t d_theta() const { return theta_c.size(); }

  void validate() const {
    if (d_xi < 1 || d_xi > kMaxContextDim) {
      throw ConfigError("HyperParams: d_xi must be in [1, " + std::to_string(kMaxContextDim) + "]");
    }
    if (w.size() != theta_c.size() * d_xi) throw ConfigError("HyperParams: W has wrong shape");
    for (const auto& [id, xi] : contexts) {
      if (xi.size() != d_xi) throw ConfigError("HyperParams: context for " + id + " has wrong length");
    }
  }

  [[nodiscard]] const std::vector<double>* find_context(const std::string& env_id) const {
    for (const auto& [id, xi] : contexts) {
      if (id == env_id) return &xi;
    }
    return nullptr;
  }

  std::vector<double>& context(const std::string& env_id) {
    for (auto& [id, xi] : contexts) {
      if (id == env_id) return xi;
    }
    throw ConfigError("no context for environment " + env_id);
  }
};

/// theta_c and W randomly initialized, all contexts zero.
[[nodiscard]] inline HyperParams init_hyper(std::vector<double> theta_c, std::size_t d_xi,
                                            const std::vector<std::string>& env_ids,
                                            std::uint64_t seed) {
  HyperParams h;
  h.theta_c = std::move(theta_c);
  h.d_xi = d_xi;
  h.w.assign(h.theta_c.size() * d_xi, 0.0);
  Rng rng(derive_seed(seed, {fnv1a64("hypernet-init")}));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_xi));
  for (double& v : h.w) v = rng.uniform(-bound, bound);
  for (const auto& id : env_ids) h.contexts.emplace_back(id, std::vector<double>(d_xi, 0.0));
  h.validate();
  return h;
}

/// theta_e = theta_c + W xi.
[[nodiscard]] inline std::vector<double> decode(const std::vector<double>& theta_c,
                                                const std::vector<double>& w,
                                                const std::vector<double>& xi) {
  const std::size_t d_theta = theta_c.size();
  const std::size_t d_xi = xi.size();
  if (w.size() != d_theta * d_xi) throw NumericalError("decode: dimension mismatch");
  std::vector<double> out = theta_c;
  for (std::size_t i = 0; i < d_theta; ++i) {
    const double* row = w.data() + i * d_xi;
    double acc = 0.0;
    for (std::size_t j = 0; j < d_xi; ++j) acc += row[j] * xi[j];
    out[i] += acc;
  }
  return out;
}

/// Recorded decode; differentiable w.r.t. all three operands.
[[nodiscard]] inline ad::Value decode(ad::Tape& tape, ad::Value theta_c, ad::Value w, ad::Value xi) {
  return tape.add(theta_c, tape.matvec(w, xi));
}

enum class PenaltyVariant { l1, l2 };

[[nodiscard]] inline const char* variant_name(PenaltyVariant v) {
  return v == PenaltyVariant::l1 ? "l1" : "l2";
}

[[nodiscard]] inline PenaltyVariant variant_from_name(const std::string& name) {
  if (name == "l1") return PenaltyVariant::l1;
  if (name == "l2") return PenaltyVariant::l2;
  throw ConfigError("unknown penalty variant '" + name + "'");
}

/**
 * @brief R(W, xi) = lambda_xi ||xi||_2^2 + lambda_omega Omega(W) with
 * Omega the squared Frobenius norm (l2 variant) or the sum of row norms
 * (l1 variant, exact row sparsity).
 */
struct PenaltyConfig {
  PenaltyVariant variant = PenaltyVariant::l1;
  double lambda_xi = 1e-4;
  double lambda_omega = 1e-6;

  void validate() const {
    if (lambda_xi < 0.0 || lambda_omega < 0.0) throw ConfigError("penalty weights must be >= 0");
  }
};

[[nodiscard]] inline double penalty(const std::vector<double>& w, std::size_t d_xi,
                                    const std::vector<double>& xi, const PenaltyConfig& cfg) {
  cfg.validate();
  double xi_sq = 0.0;
  for (double v : xi) xi_sq += v * v;
  double omega = 0.0;
  if (cfg.variant == PenaltyVariant::l2) {
    for (double v : w) omega += v * v;
  } else {
    const std::size_t rows = w.size() / d_xi;
    for (std::size_t i = 0; i < rows; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d_xi; ++j) sq += w[i * d_xi + j] * w[i * d_xi + j];
      omega += std::sqrt(sq);
    }
  }
  return cfg.lambda_xi * xi_sq + cfg.lambda_omega * omega;
}

[[nodiscard]] inline ad::Value penalty(ad::Tape& tape, ad::Value w, ad::Value xi,
                                       const PenaltyConfig& cfg) {
  cfg.validate();
  ad::Value xi_term = tape.scale(tape.dot(xi, xi), cfg.lambda_xi);
  ad::Value omega = cfg.variant == PenaltyVariant::l2 ? tape.dot(w, w) : tape.row_norm_sum(w);
  return tape.add(xi_term, tape.scale(omega, cfg.lambda_omega));
}

/**
 * @brief Both sides of the two locality upper bounds, for test assertions:
 * ||W xi||_2^2 <= ||W||_2^2 ||xi||_2^2 (operator 2-norm by power iteration)
 * and ||W xi||_1 <= ||xi||_2 sum_i ||W_{i,:}||_2.
 */
struct LocalityBounds {
  double lhs_l2 = 0.0;
  double rhs_l2 = 0.0;
  double lhs_l1 = 0.0;
  double rhs_l1 = 0.0;
};

[[nodiscard]] inline LocalityBounds locality_bounds_check(const std::vector<double>& w,
                                                          std::size_t d_xi,
                                                          const std::vector<double>& xi) {
  if (xi.size() != d_xi || w.size() % d_xi != 0) {
    throw NumericalError("locality_bounds_check: dimension mismatch");
  }
  const std::size_t d_theta = w.size() / d_xi;
  LocalityBounds b;
  double xi_sq = 0.0;
  for (double v : xi) xi_sq += v * v;

  double row_norm_sum = 0.0;
  for (std::size_t i = 0; i < d_theta; ++i) {
    const double* row = w.data() + i * d_xi;
    double acc = 0.0;
    double sq = 0.0;
    for (std::size_t j = 0; j < d_xi; ++j) {
      acc += row[j] * xi[j];
      sq += row[j] * row[j];
    }
    b.lhs_l2 += acc * acc;
    b.lhs_l1 += std::abs(acc);
    row_norm_sum += std::sqrt(sq);
  }
  const double op_norm = linalg::operator_norm(w, d_theta, d_xi);
  b.rhs_l2 = op_norm * op_norm * xi_sq;
  b.rhs_l1 = std::sqrt(xi_sq) * row_norm_sum;
  return b;
}

}  // namespace coda::hypernet
