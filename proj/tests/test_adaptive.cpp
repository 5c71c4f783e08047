#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "planbound/adaptive.hpp"
#include "planbound/errors.hpp"

using namespace planbound;

namespace {

// Trapezoid integration of est.pdf over its own grid span, on an independent
// lattice so grid()/grid_density() are not assumed correct.
double integrate_pdf(const DensityEstimate& est, std::size_t points = 20001) {
  const double step = (est.grid_hi - est.grid_lo) / static_cast<double>(points - 1);
  double acc = 0.0;
  double prev = est.pdf(est.grid_lo);
  for (std::size_t i = 1; i < points; ++i) {
    const double f = est.pdf(est.grid_lo + step * static_cast<double>(i));
    acc += 0.5 * (prev + f) * step;
    prev = f;
  }
  return acc;
}

std::vector<double> normal_sample(std::size_t n, double mean, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(mean, sd);
  std::vector<double> out(n);
  for (auto& x : out) x = normal(rng);
  return out;
}

}  // namespace

TEST_CASE("bandwidth follows Silverman's rule with the documented floor") {
  const std::vector<double> sample{0.0, 1.0, 2.0};
  const DensityEstimate est = estimate_density(sample);
  // Sample sd of {0,1,2} is exactly 1.
  const double expected_bw = 1.06 * std::pow(3.0, -0.2);
  CHECK(est.bandwidth == doctest::Approx(expected_bw).epsilon(1e-12));
  CHECK(est.grid_lo == doctest::Approx(0.0 - 5.0 * expected_bw));
  CHECK(est.grid_hi == doctest::Approx(2.0 + 5.0 * expected_bw));

  const std::vector<double> constant{3.0, 3.0, 3.0, 3.0};
  const DensityEstimate spike = estimate_density(constant);
  CHECK(spike.bandwidth == doctest::Approx(1e-6 * 4.0).epsilon(1e-12));
}

TEST_CASE("pdf is the Gaussian mixture over the sample") {
  const std::vector<double> sample{0.0, 1.0, 2.0};
  const DensityEstimate est = estimate_density(sample);
  const double bw = est.bandwidth;
  for (double x : {-1.0, 0.0, 0.5, 1.0, 2.5}) {
    double mix = 0.0;
    for (double s : sample) {
      const double z = (x - s) / bw;
      mix += std::exp(-0.5 * z * z) / (bw * std::sqrt(2.0 * std::acos(-1.0)));
    }
    mix /= 3.0;
    CHECK(est.pdf(x) == doctest::Approx(mix).epsilon(1e-12));
  }
}

TEST_CASE("density integrates to one") {
  const auto sample = normal_sample(500, 0.0, 1.0, 991);
  const DensityEstimate est = estimate_density(sample);
  const double integral = integrate_pdf(est);
  CHECK(integral > 0.999);
  CHECK(integral < 1.001);

  // Constant sample: the floored bandwidth still yields a proper density.
  const std::vector<double> constant(16, 42.0);
  const DensityEstimate spike = estimate_density(constant);
  const double spike_integral = integrate_pdf(spike);
  CHECK(spike_integral > 0.999);
  CHECK(spike_integral < 1.001);
}

TEST_CASE("density estimation rejects degenerate input") {
  CHECK_THROWS_AS(estimate_density(std::vector<double>{1.0}), PreconditionError);
  CHECK_THROWS_AS(estimate_density(std::vector<double>{}), PreconditionError);
  CHECK_THROWS_AS(estimate_density(std::vector<double>{1.0, 2.0}, 8), ConfigError);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(estimate_density(std::vector<double>{1.0, inf}), ConfigError);
}

TEST_CASE("total variation of a density with itself is zero") {
  const auto sample = normal_sample(200, 5.0, 2.0, 17);
  const DensityEstimate a = estimate_density(sample);
  const DensityEstimate b = estimate_density(sample);
  CHECK(total_variation(a, b) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("total variation is symmetric and bounded") {
  const DensityEstimate a = estimate_density(normal_sample(300, 0.0, 1.0, 1));
  const DensityEstimate b = estimate_density(normal_sample(300, 1.0, 2.0, 2));
  const double ab = total_variation(a, b);
  const double ba = total_variation(b, a);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
  CHECK(ab >= 0.0);
  CHECK(ab <= 1.0);
}

TEST_CASE("densities with far-apart narrow supports have total variation one") {
  std::vector<double> left, right;
  for (int i = 0; i < 50; ++i) {
    left.push_back(0.0 + 1e-3 * i);
    right.push_back(1000.0 + 1e-3 * i);
  }
  const double tv = total_variation(estimate_density(left), estimate_density(right));
  CHECK(tv == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("total variation between shifted normals matches the closed form") {
  // TV(N(0,1), N(d,1)) = erf(d / (2*sqrt(2))).
  const double d = 0.2;
  const double exact = std::erf(d / (2.0 * std::sqrt(2.0)));
  const DensityEstimate a = estimate_density(normal_sample(4000, 0.0, 1.0, 101));
  const DensityEstimate b = estimate_density(normal_sample(4000, d, 1.0, 202));
  const double tv = total_variation(a, b);
  CHECK(std::fabs(tv - exact) < 0.02);
}

TEST_CASE("delta adjustment worked example") {
  const AdjustedDelta adj = adjust_delta(0.2, 300, 0.08);
  CHECK(std::fabs(adj.delta_tilde - 0.117067) < 1e-6);
  CHECK(adj.delta == 0.2);
  CHECK(adj.k == 300);
  CHECK(adj.epsilon == 0.08);
}

TEST_CASE("delta adjustment with zero epsilon keeps only the finite-sample inflation") {
  const AdjustedDelta adj = adjust_delta(0.2, 300, 0.0);
  CHECK(adj.delta_tilde == doctest::Approx(1.0 - (301.0 / 300.0) * 0.8).epsilon(1e-12));
}

TEST_CASE("delta adjustment clamps to zero when the correction swallows the budget") {
  CHECK(adjust_delta(0.1, 9, 0.0).delta_tilde == doctest::Approx(0.0));
  CHECK(adjust_delta(0.2, 300, 0.5).delta_tilde == doctest::Approx(0.0));
}

TEST_CASE("delta adjustment validates its inputs") {
  CHECK_THROWS_AS(adjust_delta(0.0, 10, 0.1), ConfigError);
  CHECK_THROWS_AS(adjust_delta(1.0, 10, 0.1), ConfigError);
  CHECK_THROWS_AS(adjust_delta(0.1, 0, 0.1), PreconditionError);
  CHECK_THROWS_AS(adjust_delta(0.1, 10, -0.1), ConfigError);
  CHECK_THROWS_AS(adjust_delta(0.1, 10, 1.0), ConfigError);
}

TEST_CASE("adjusted bound dominates the plain bound") {
  std::mt19937_64 rng(555);
  std::uniform_real_distribution<double> value(0.0, 100.0);
  for (int round = 0; round < 50; ++round) {
    ScoreSet s;
    const std::size_t k = 20 + rng() % 300;
    for (std::size_t i = 0; i < k; ++i) s.scores.push_back(value(rng));
    const double delta = 0.1 + 0.3 * (static_cast<double>(rng() % 100) / 100.0);
    const double eps = 0.1 * (static_cast<double>(rng() % 100) / 100.0);
    const double plain = quantile_upper_bound(s, delta).value;
    const double adjusted = adjusted_upper_bound(s, delta, eps).value;
    CHECK(adjusted >= plain);
  }
}

TEST_CASE("an adjusted level of zero yields an infinite bound") {
  ScoreSet s{{1, 2, 3, 4, 5, 6, 7, 8, 9}, std::nullopt};
  const UpperBound b = adjusted_upper_bound(s, 0.1, 0.0);
  CHECK(std::isinf(b.value));
  CHECK(b.delta == doctest::Approx(0.0));
}

TEST_CASE("bound construction refuses an epsilon below the measured shift") {
  ScoreSet s{{1, 2, 3, 4, 5}, std::nullopt};
  ShiftConfig shift;
  shift.epsilon = 0.1;
  shift.estimated_tv = 0.15;
  CHECK_THROWS_AS(adjusted_upper_bound(s, 0.2, shift.epsilon, shift), PreconditionError);
  shift.epsilon = 0.2;
  CHECK_NOTHROW(adjusted_upper_bound(s, 0.2, shift.epsilon, shift));
  ScoreSet empty;
  CHECK_THROWS_AS(adjusted_upper_bound(empty, 0.2, 0.0), PreconditionError);
}

TEST_CASE("adjusted bound restores coverage under a mean shift") {
  // Calibration scores from N(0,1), deployment scores from N(0.4,1);
  // TV is erf(0.2/sqrt(2)) ~ 0.158, so epsilon = 0.17 is an honest budget.
  const double delta = 0.2;
  const double eps = 0.17;
  const std::size_t k = 300;
  std::mt19937_64 rng(86420);
  std::normal_distribution<double> cal_dist(0.0, 1.0);
  std::normal_distribution<double> test_dist(0.4, 1.0);
  const int trials = 4000;
  int plain_covered = 0, adjusted_covered = 0;
  std::vector<double> cal(k);
  for (int t = 0; t < trials; ++t) {
    for (auto& c : cal) c = cal_dist(rng);
    const double test_score = test_dist(rng);
    const double plain = quantile_value(cal, delta);
    const double adjusted = quantile_value(cal, adjust_delta(delta, k, eps).delta_tilde);
    if (test_score <= plain) ++plain_covered;
    if (test_score <= adjusted) ++adjusted_covered;
  }
  const double plain_rate = static_cast<double>(plain_covered) / trials;
  const double adjusted_rate = static_cast<double>(adjusted_covered) / trials;
  CHECK(plain_rate < 1.0 - delta - 0.03);      // the shift visibly breaks plain coverage
  CHECK(adjusted_rate >= 1.0 - delta - 0.02);  // the correction wins it back
}
