#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "planbound/adaptive.hpp"
#include "planbound/conformal.hpp"
#include "planbound/stl.hpp"
#include "planbound/trace.hpp"

namespace planbound {

// What counts as one calibration/test unit when coverage is evaluated:
// every step pooled together, steps grouped by join pattern, or one score
// per whole plan (summed costs and latencies).
enum class Granularity { Unified, Pattern, WholePlan };
std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view text);

struct ExperimentConfig {
  std::size_t iterations = 1000;
  double delta = 0.1;
  double calibration_fraction = 0.5;
  std::uint64_t seed = 0;
  Granularity granularity = Granularity::Unified;
  // Queries are resampled with replacement each iteration by default; set to
  // false to use disjoint random splits instead.
  bool sample_with_replacement = true;
  std::size_t tv_sample_size = 500;          // KDE sample size when measuring shift
  std::size_t shift_calibration_draw = 300;  // per-iteration calibration size (shift experiment)
};

// Fraction of test scores at or below the bound calibrated at level delta.
double empirical_coverage(const ScoreSet& calibration, const ScoreSet& test, double delta);

struct CoverageResult {
  std::vector<double> ec;        // empirical coverage per iteration
  std::vector<double> c_values;  // calibrated bound per iteration (may be infinite)
  double mean_ec() const;
};

// Repeated resample -> calibrate -> measure loop over the workload's queries.
// Deterministic in the seed; iteration seeds are hash-derived, so results do
// not depend on evaluation order.
CoverageResult run_sampling_experiment(const Workload& workload, const ExperimentConfig& cfg);

struct DensityCurve {
  std::vector<double> x;
  std::vector<double> density;
  double peak() const;  // x at the maximum density
};

// KDE of coverage values on a 512-point lattice over [0, 1].
DensityCurve kde_density_curve(std::span<const double> values);

struct VerificationRow {
  std::string query_id;
  double rho_hat = 0.0;     // smallest estimated robustness over the query's steps
  double rho_actual = 0.0;  // robustness of the full executed trajectory
  double c = 0.0;
  bool guaranteed = false;  // every step cleared the bound strictly
  bool satisfied = false;   // the executed trajectory satisfies the formula
};

struct VerificationStats {
  double c = 0.0;                  // calibrated bound on robustness scores
  std::size_t calibration_scores = 0;
  std::size_t test_queries = 0;    // traces with at least 2 steps
  std::size_t skipped_short = 0;   // test traces excluded for having < 2 steps
  double covered_fraction = 0.0;   // queries whose scores stayed <= c at every step
  double guaranteed_satisfied_fraction = 0.0;  // satisfied among fully guaranteed
  std::size_t guaranteed_queries = 0;
  std::size_t violations = 0;      // queries with at least one non-guaranteed step
  std::vector<VerificationRow> rows;
};

// Splits the workload, calibrates robustness scores on one side, and checks
// the predictive guarantee on the other.
VerificationStats runtime_verification_experiment(const Workload& workload, const StlSpec& spec,
                                                  double delta, const ExperimentConfig& cfg);

struct ShiftStats {
  double tv = 0.0;           // measured between calibration and test scores
  double epsilon = 0.0;
  double delta = 0.0;
  double delta_tilde = 0.0;  // adjusted level at the per-iteration draw size
  double c = 0.0;            // full-pool bound at delta
  double c_tilde = 0.0;      // full-pool bound at delta_tilde (may be infinite)
  double coverage_c = 0.0;        // whole test pool under c
  double coverage_c_tilde = 0.0;  // whole test pool under c_tilde
  std::vector<double> ec_c;        // per-iteration coverages under the plain bound
  std::vector<double> ec_c_tilde;  // per-iteration coverages under the adjusted bound
  DensityCurve curve_c, curve_c_tilde;
};

// Measures the score-distribution shift between the two workloads, refuses
// if epsilon cannot absorb it, then contrasts plain and shift-adjusted
// coverage over repeated calibration draws.
ShiftStats shift_experiment(const Workload& calibration, const Workload& test, double delta,
                            double epsilon, const ExperimentConfig& cfg);

// CSV emitters matching the documented schemas.
void write_coverage_csv(const CoverageResult& r, std::ostream& out);
void write_density_csv(const DensityCurve& c, std::ostream& out);
void write_verification_csv(const VerificationStats& s, std::ostream& out);
void write_shift_csv(const ShiftStats& s, std::ostream& out);

}  // namespace planbound
