#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "coda/errors.hpp"

namespace coda::analysis {

/**
 * @brief Mean absolute percentage error, as a fraction:
 * (1/d) * sum over j with y_j != 0 of |z_j - y_j| / |y_j|.
 *
 * The sum skips zero targets but the normalization stays 1/d, exactly as
 * defined; multiply by 100 when reporting percent.
 */
[[nodiscard]] inline double mape(const double* z, const double* y, std::size_t d) {
  if (d == 0) throw NumericalError("mape: empty input");
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    if (y[j] == 0.0) continue;
    acc += std::abs(z[j] - y[j]) / std::abs(y[j]);
  }
  return acc / static_cast<double>(d);
}

[[nodiscard]] inline double mape(const std::vector<double>& z, const std::vector<double>& y) {
  if (z.size() != y.size()) throw NumericalError("mape: length mismatch");
  return mape(z.data(), y.data(), z.size());
}

}  // namespace coda::analysis
