#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "coda/errors.hpp"

namespace coda {

using Shape = std::vector<std::size_t>;

[[nodiscard]] inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

[[nodiscard]] inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/**
 * @brief Dense row-major float64 array; the universal numeric value.
 *
 * Invariant: data.size() == product(shape) and every shape entry is >= 1.
 */
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    for (std::size_t dim : shape) {
      if (dim == 0) throw NumericalError("Tensor: zero-sized dimension in " + shape_str(shape));
    }
    if (data.size() != shape_numel(shape)) {
      throw NumericalError("Tensor: data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
  }

  [[nodiscard]] static Tensor zeros(Shape s) {
    std::vector<double> d(shape_numel(s), 0.0);
    return Tensor(std::move(s), std::move(d));
  }

  [[nodiscard]] static Tensor full(Shape s, double v) {
    std::vector<double> d(shape_numel(s), v);
    return Tensor(std::move(s), std::move(d));
  }

  [[nodiscard]] static Tensor scalar(double v) { return Tensor({1}, {v}); }

  [[nodiscard]] std::size_t numel() const { return data.size(); }

  [[nodiscard]] double& operator[](std::size_t i) { return data[i]; }
  [[nodiscard]] double operator[](std::size_t i) const { return data[i]; }

  [[nodiscard]] bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

inline void ensure_finite(const Tensor& t, const std::string& locus) {
  if (!t.all_finite()) throw NumericalError("non-finite value in " + locus);
}

[[nodiscard]] inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

// Elementwise helpers for the plain (non-recorded) numeric path; the
// names mirror the autodiff ops so the ODE steppers can be generic.

[[nodiscard]] inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) throw NumericalError("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

[[nodiscard]] inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) throw NumericalError("sub: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

[[nodiscard]] inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.data) v *= c;
  return out;
}

/// a + c * b, the fused update used by the solver stages.
[[nodiscard]] inline Tensor axpy(const Tensor& a, double c, const Tensor& b) {
  if (!same_shape(a, b)) throw NumericalError("axpy: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += c * b.data[i];
  return out;
}

[[nodiscard]] inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace coda
