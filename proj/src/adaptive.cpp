#include "planbound/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "planbound/errors.hpp"

namespace planbound {

namespace {

// Grid margin in bandwidths. Three is the textbook minimum to cover the
// kernels' mass; five keeps the integral error well under 1e-3 even when
// every sample point sits at the range edge.
constexpr double kGridMargin = 5.0;

}  // namespace

double DensityEstimate::pdf(double x) const {
  const double inv = 1.0 / bandwidth;
  const double norm = inv / (std::sqrt(2.0 * std::numbers::pi) * static_cast<double>(sample.size()));
  double acc = 0.0;
  for (double s : sample) {
    const double z = (x - s) * inv;
    acc += std::exp(-0.5 * z * z);
  }
  return acc * norm;
}

std::vector<double> DensityEstimate::grid() const {
  std::vector<double> xs(grid_points);
  const double step = (grid_hi - grid_lo) / static_cast<double>(grid_points - 1);
  for (std::size_t i = 0; i < grid_points; ++i)
    xs[i] = grid_lo + step * static_cast<double>(i);
  return xs;
}

std::vector<double> DensityEstimate::grid_density() const {
  std::vector<double> ys;
  ys.reserve(grid_points);
  for (double x : grid()) ys.push_back(pdf(x));
  return ys;
}

DensityEstimate estimate_density(std::span<const double> sample, std::size_t grid_points) {
  if (sample.size() < 2) throw PreconditionError("density estimation needs at least 2 samples");
  if (grid_points < 16) throw ConfigError("grid needs at least 16 points");
  for (double s : sample)
    if (std::isnan(s) || std::isinf(s)) throw ConfigError("samples must be finite");

  const auto n = static_cast<double>(sample.size());
  double mean = 0.0;
  for (double s : sample) mean += s;
  mean /= n;
  double ss = 0.0;
  for (double s : sample) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / (n - 1.0));

  // Silverman's rule, floored so constant samples still get a usable kernel.
  double bw = 1.06 * sd * std::pow(n, -0.2);
  const double floor = 1e-6 * (1.0 + std::fabs(mean));
  if (bw < floor) bw = floor;

  auto [lo_it, hi_it] = std::minmax_element(sample.begin(), sample.end());
  DensityEstimate d;
  d.sample.assign(sample.begin(), sample.end());
  d.bandwidth = bw;
  d.grid_lo = *lo_it - kGridMargin * bw;
  d.grid_hi = *hi_it + kGridMargin * bw;
  d.grid_points = grid_points;
  return d;
}

double total_variation(const DensityEstimate& a, const DensityEstimate& b) {
  std::vector<double> xs = a.grid();
  {
    std::vector<double> bx = b.grid();
    xs.insert(xs.end(), bx.begin(), bx.end());
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

  double integral = 0.0;
  double prev_x = xs.front();
  double prev_f = std::fabs(a.pdf(prev_x) - b.pdf(prev_x));
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double x = xs[i];
    const double f = std::fabs(a.pdf(x) - b.pdf(x));
    integral += 0.5 * (prev_f + f) * (x - prev_x);
    prev_x = x;
    prev_f = f;
  }
  return std::clamp(0.5 * integral, 0.0, 1.0);
}

AdjustedDelta adjust_delta(double delta, std::size_t k, double epsilon) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (k == 0) throw PreconditionError("adjustment needs a non-empty calibration set");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in [0, 1)");

  auto g = [epsilon](double b) { return std::max(0.0, b - epsilon); };
  auto g_inv = [epsilon](double b) { return std::min(1.0, b + epsilon); };

  const double inflate = 1.0 + 1.0 / static_cast<double>(k);
  const double dt = 1.0 - g_inv(g(inflate * g_inv(1.0 - delta)));

  AdjustedDelta out;
  out.delta = delta;
  out.delta_tilde = std::clamp(dt, 0.0, 1.0);
  out.k = k;
  out.epsilon = epsilon;
  return out;
}

UpperBound adjusted_upper_bound(const ScoreSet& s, double delta, double epsilon,
                                const std::optional<ShiftConfig>& shift) {
  if (shift && shift->epsilon < shift->estimated_tv)
    throw PreconditionError("epsilon is below the measured distribution shift");
  if (s.scores.empty()) throw PreconditionError("adjustment needs a non-empty calibration set");

  const AdjustedDelta adj = adjust_delta(delta, s.scores.size(), epsilon);
  UpperBound b;
  b.value = quantile_value(s.scores, adj.delta_tilde);
  b.delta = adj.delta_tilde;
  b.k = s.scores.size();
  b.mode = BoundMode::Unified;
  b.pattern = s.pattern;
  return b;
}

}  // namespace planbound
