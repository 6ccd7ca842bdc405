#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "coda/errors.hpp"

// Small dense helpers for the low-dimensional systems this project needs
// (d_xi <= 16, at most a few dozen environments). Row-major throughout.

namespace coda::linalg {

[[nodiscard]] inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

[[nodiscard]] inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

/// y = A x for A of shape [m, n] row-major.
[[nodiscard]] inline std::vector<double> matvec(const std::vector<double>& a, std::size_t m,
                                                std::size_t n, const std::vector<double>& x) {
  std::vector<double> y(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data() + i * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// y = A^T x for A of shape [m, n] row-major.
[[nodiscard]] inline std::vector<double> matvec_t(const std::vector<double>& a, std::size_t m,
                                                  std::size_t n, const std::vector<double>& x) {
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* row = a.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += xi * row[j];
  }
  return y;
}

/// G = A^T A (n x n) for A of shape [m, n] row-major.
[[nodiscard]] inline std::vector<double> gram(const std::vector<double>& a, std::size_t m, std::size_t n) {
  std::vector<double> g(n * n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = a.data() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) g[i * n + j] += row[i] * row[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) g[i * n + j] = g[j * n + i];
  }
  return g;
}

struct SymmetricEigen {
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // column k of [n, n] row-major = k-th eigenvector
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (small n).
[[nodiscard]] inline SymmetricEigen jacobi_eigh(std::vector<double> a, std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    }
    if (off < 1e-300) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a[i * n + i];
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return diag[x] > diag[y]; });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.assign(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = diag[order[k]];
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + k] = v[i * n + order[k]];
  }
  return out;
}

/**
 * @brief Singular values (descending) of an [m, n] matrix with m >= n,
 * via the eigenvalues of A^T A.
 */
[[nodiscard]] inline std::vector<double> singular_values(const std::vector<double>& a, std::size_t m,
                                                         std::size_t n) {
  const SymmetricEigen eg = jacobi_eigh(gram(a, m, n), n);
  std::vector<double> sv(n);
  for (std::size_t i = 0; i < n; ++i) sv[i] = std::sqrt(std::max(0.0, eg.values[i]));
  return sv;
}

/**
 * @brief Leading left singular vectors u_k = A v_k / sigma_k of an [m, n]
 * matrix (m >= n), one vector of length m per requested component.
 */
[[nodiscard]] inline std::vector<std::vector<double>> left_singular_vectors(
    const std::vector<double>& a, std::size_t m, std::size_t n, std::size_t count) {
  const SymmetricEigen eg = jacobi_eigh(gram(a, m, n), n);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < count && k < n; ++k) {
    const double sigma = std::sqrt(std::max(0.0, eg.values[k]));
    std::vector<double> vk(n);
    for (std::size_t i = 0; i < n; ++i) vk[i] = eg.vectors[i * n + k];
    std::vector<double> uk = matvec(a, m, n, vk);
    if (sigma > 0.0) {
      for (double& x : uk) x /= sigma;
    }
    out.push_back(std::move(uk));
  }
  return out;
}

struct SolveResult {
  std::vector<double> x;
  double condition_number;
};

/**
 * @brief Solve A x = b (A symmetric, small) and report the spectral
 * condition number |lambda|_max / |lambda|_min.
 */
[[nodiscard]] inline SolveResult solve_symmetric(const std::vector<double>& a, std::size_t n,
                                                 const std::vector<double>& b) {
  const SymmetricEigen eg = jacobi_eigh(a, n);
  double lo = std::abs(eg.values[0]);
  double hi = std::abs(eg.values[0]);
  for (double v : eg.values) {
    lo = std::min(lo, std::abs(v));
    hi = std::max(hi, std::abs(v));
  }
  const double cond = lo == 0.0 ? std::numeric_limits<double>::infinity() : hi / lo;
  // x = V diag(1/lambda) V^T b
  std::vector<double> vtb(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += eg.vectors[i * n + k] * b[i];
    vtb[k] = s;
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (eg.values[k] == 0.0) continue;
    const double c = vtb[k] / eg.values[k];
    for (std::size_t i = 0; i < n; ++i) x[i] += c * eg.vectors[i * n + k];
  }
  return {std::move(x), cond};
}

/**
 * @brief Operator 2-norm of W ([m, n] row-major) by power iteration on
 * W^T W, which lives in the small n-dimensional space.
 */
[[nodiscard]] inline double operator_norm(const std::vector<double>& w, std::size_t m, std::size_t n,
                                          int iterations = 200) {
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double sigma_sq = 0.0;
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> wv = matvec(w, m, n, v);
    std::vector<double> wtwv = matvec_t(w, m, n, wv);
    const double norm = norm2(wtwv);
    if (norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = wtwv[i] / norm;
    sigma_sq = norm;
  }
  return std::sqrt(sigma_sq);
}

/**
 * @brief Least squares fit min ||D c - y||_2 via normal equations; D is
 * [rows, cols] row-major. Throws DegenerateFitError when the normal matrix
 * is numerically singular.
 */
[[nodiscard]] inline std::vector<double> least_squares(const std::vector<double>& d, std::size_t rows,
                                                       std::size_t cols, const std::vector<double>& y) {
  std::vector<double> g = gram(d, rows, cols);
  std::vector<double> rhs = matvec_t(d, rows, cols, y);
  const SymmetricEigen eg = jacobi_eigh(g, cols);
  const double max_ev = std::abs(eg.values[0]);
  const double min_ev = std::abs(eg.values[cols - 1]);
  if (!(max_ev > 0.0) || min_ev < 1e-12 * max_ev) {
    throw DegenerateFitError("least_squares: rank-deficient design matrix");
  }
  return solve_symmetric(g, cols, rhs).x;
}

}  // namespace coda::linalg
