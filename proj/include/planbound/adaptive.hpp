#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "planbound/conformal.hpp"

namespace planbound {

// Gaussian kernel density estimate with Silverman's bandwidth. The stored
// grid covers the sample range with generous margin so the density integrates
// to 1 up to numerical error; pdf() can still be queried anywhere.
struct DensityEstimate {
  std::vector<double> sample;
  double bandwidth = 0.0;
  double grid_lo = 0.0;
  double grid_hi = 0.0;
  std::size_t grid_points = 2048;

  double pdf(double x) const;
  std::vector<double> grid() const;            // lattice positions
  std::vector<double> grid_density() const;    // pdf at each lattice position
};

DensityEstimate estimate_density(std::span<const double> sample, std::size_t grid_points = 2048);

// Total variation distance 0.5 * integral |p - q|, computed by trapezoid on
// the merged lattices of both estimates (so narrow, far-apart densities are
// both resolved). Clamped to [0, 1].
double total_variation(const DensityEstimate& a, const DensityEstimate& b);

// Distribution-shift budget: the epsilon the user is willing to assume, and
// the total variation actually measured between calibration and deployment
// scores. Bound construction refuses to proceed when epsilon < estimated_tv.
struct ShiftConfig {
  double epsilon = 0.0;
  double estimated_tv = 0.0;
};

struct AdjustedDelta {
  double delta = 0.0;        // requested miscoverage
  double delta_tilde = 0.0;  // effective level after the shift correction
  std::size_t k = 0;
  double epsilon = 0.0;
};

// Robust-conformal correction: with g(b) = max(0, b - eps) and
// g_inv(b) = min(1, b + eps),
//   delta_tilde = 1 - g_inv(g((1 + 1/K) * g_inv(1 - delta))),
// clamped to [0, 1]. eps = 0 recovers the plain finite-sample level.
AdjustedDelta adjust_delta(double delta, std::size_t k, double epsilon);

// Plain quantile taken at the adjusted level. delta_tilde = 0 legitimately
// produces an infinite bound. When a ShiftConfig is supplied, epsilon must
// dominate the measured shift or a PreconditionError is thrown.
UpperBound adjusted_upper_bound(const ScoreSet& s, double delta, double epsilon,
                                const std::optional<ShiftConfig>& shift = std::nullopt);

}  // namespace planbound
