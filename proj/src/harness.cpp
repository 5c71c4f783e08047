#include "planbound/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "planbound/errors.hpp"
#include "planbound/rng.hpp"

namespace planbound {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::Unified: return "unified";
    case Granularity::Pattern: return "pattern";
    case Granularity::WholePlan: return "whole_plan";
  }
  return "?";
}

Granularity granularity_from_string(std::string_view text) {
  if (text == "unified") return Granularity::Unified;
  if (text == "pattern") return Granularity::Pattern;
  if (text == "whole_plan") return Granularity::WholePlan;
  throw ConfigError("unknown granularity '" + std::string(text) + "'");
}

double empirical_coverage(const ScoreSet& calibration, const ScoreSet& test, double delta) {
  if (test.scores.empty()) throw PreconditionError("empty test score set");
  const UpperBound b = quantile_upper_bound(calibration, delta);
  std::size_t covered = 0;
  for (double s : test.scores)
    if (s <= b.value) ++covered;
  return static_cast<double>(covered) / static_cast<double>(test.scores.size());
}

double CoverageResult::mean_ec() const {
  if (ec.empty()) return 0.0;
  return std::accumulate(ec.begin(), ec.end(), 0.0) / static_cast<double>(ec.size());
}

namespace {

// Per-query score material, precomputed once per experiment.
struct QueryScores {
  std::vector<double> step_scores;                               // unified
  std::vector<std::pair<std::optional<Pattern>, double>> typed;  // pattern granularity
  double whole = 0.0;                                            // whole-plan score
};

QueryScores score_query(const QueryTrace& t) {
  QueryScores qs;
  double cost_sum = 0.0, lat_sum = 0.0;
  for (const auto& s : t.steps) {
    const double score = std::fabs(s.actual_latency - s.predicted_cost);
    qs.step_scores.push_back(score);
    qs.typed.emplace_back(s.pattern, score);
    cost_sum += s.predicted_cost;
    lat_sum += s.actual_latency;
  }
  qs.whole = std::fabs(lat_sum - cost_sum);
  return qs;
}

}  // namespace

CoverageResult run_sampling_experiment(const Workload& workload, const ExperimentConfig& cfg) {
  if (cfg.iterations == 0) throw ConfigError("need at least one iteration");
  if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(cfg.calibration_fraction > 0.0 && cfg.calibration_fraction < 1.0))
    throw ConfigError("calibration fraction must lie in (0, 1)");
  const std::size_t n = workload.traces.size();
  if (n < 2) throw PreconditionError("need at least 2 traces");

  std::vector<QueryScores> scores;
  scores.reserve(n);
  for (const auto& t : workload.traces) scores.push_back(score_query(t));

  const auto n_cal = static_cast<std::size_t>(
      std::floor(cfg.calibration_fraction * static_cast<double>(n) + 0.5));
  if (n_cal == 0 || n_cal >= n)
    throw PreconditionError("calibration fraction leaves one side empty");
  const std::size_t n_test = n - n_cal;
  const std::size_t need = min_calibration_size(cfg.delta);

  CoverageResult result;
  std::size_t usable = 0;
  for (std::size_t m = 0; m < cfg.iterations; ++m) {
    std::mt19937_64 rng(derive_seed(cfg.seed, m));

    std::vector<std::size_t> cal_idx, test_idx;
    if (cfg.sample_with_replacement) {
      for (std::size_t i = 0; i < n_cal; ++i) cal_idx.push_back(rng() % n);
      for (std::size_t i = 0; i < n_test; ++i) test_idx.push_back(rng() % n);
    } else {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
        std::swap(idx[i], idx[j]);
      }
      cal_idx.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_cal));
      test_idx.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_cal), idx.end());
    }

    double c = kInf;
    double ec = 1.0;
    bool have_ec = false;

    switch (cfg.granularity) {
      case Granularity::Unified: {
        std::vector<double> cal, test;
        for (std::size_t i : cal_idx)
          cal.insert(cal.end(), scores[i].step_scores.begin(), scores[i].step_scores.end());
        for (std::size_t i : test_idx)
          test.insert(test.end(), scores[i].step_scores.begin(), scores[i].step_scores.end());
        if (test.empty()) break;
        c = quantile_value(cal, cfg.delta);
        std::size_t covered = 0;
        for (double s : test)
          if (s <= c) ++covered;
        ec = static_cast<double>(covered) / static_cast<double>(test.size());
        have_ec = std::isfinite(c);
        if (!have_ec) {
          // An infinite bound trivially covers; keep it out of the stats but
          // remember the iteration happened.
          result.ec.push_back(1.0);
          result.c_values.push_back(c);
          continue;
        }
        break;
      }
      case Granularity::Pattern: {
        std::map<Pattern, std::vector<double>> groups;
        for (std::size_t i : cal_idx)
          for (const auto& [pattern, score] : scores[i].typed)
            if (pattern) groups[*pattern].push_back(score);
        std::map<Pattern, double> bounds;
        double cmax = -kInf;
        for (auto& [pattern, group] : groups) {
          if (group.size() < need) continue;
          const double cb = quantile_value(group, cfg.delta);
          bounds[pattern] = cb;
          cmax = std::max(cmax, cb);
        }
        if (bounds.empty()) break;
        std::size_t covered = 0, counted = 0;
        for (std::size_t i : test_idx) {
          for (const auto& [pattern, score] : scores[i].typed) {
            if (!pattern) continue;
            auto it = bounds.find(*pattern);
            if (it == bounds.end()) continue;
            ++counted;
            if (score <= it->second) ++covered;
          }
        }
        if (counted == 0) break;
        c = cmax;
        ec = static_cast<double>(covered) / static_cast<double>(counted);
        have_ec = true;
        break;
      }
      case Granularity::WholePlan: {
        std::vector<double> cal, test;
        for (std::size_t i : cal_idx) cal.push_back(scores[i].whole);
        for (std::size_t i : test_idx) test.push_back(scores[i].whole);
        c = quantile_value(cal, cfg.delta);
        std::size_t covered = 0;
        for (double s : test)
          if (s <= c) ++covered;
        ec = static_cast<double>(covered) / static_cast<double>(test.size());
        have_ec = std::isfinite(c);
        if (!have_ec) {
          result.ec.push_back(1.0);
          result.c_values.push_back(c);
          continue;
        }
        break;
      }
    }

    if (!have_ec) continue;
    ++usable;
    result.ec.push_back(ec);
    result.c_values.push_back(c);
  }

  if (usable == 0)
    throw PreconditionError("no iteration produced a finite bound; calibration sets are too small");
  return result;
}

double DensityCurve::peak() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < density.size(); ++i)
    if (density[i] > density[best]) best = i;
  return x.empty() ? 0.0 : x[best];
}

DensityCurve kde_density_curve(std::span<const double> values) {
  if (values.size() < 2) throw PreconditionError("density curve needs at least 2 values");
  const DensityEstimate est = estimate_density(values);
  DensityCurve curve;
  constexpr std::size_t kPoints = 512;
  curve.x.reserve(kPoints);
  curve.density.reserve(kPoints);
  for (std::size_t i = 0; i < kPoints; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(kPoints - 1);
    curve.x.push_back(x);
    curve.density.push_back(est.pdf(x));
  }
  return curve;
}

VerificationStats runtime_verification_experiment(const Workload& workload, const StlSpec& spec,
                                                  double delta, const ExperimentConfig& cfg) {
  auto [cal, test] = split_workload(workload, cfg.calibration_fraction, cfg.seed);

  const ScoreSet scores = robustness_scores(cal, spec);
  if (scores.scores.empty())
    throw PreconditionError("no calibration trace has at least 2 steps");
  const UpperBound bound = quantile_upper_bound(scores, delta);

  VerificationStats stats;
  stats.c = bound.value;
  stats.calibration_scores = scores.scores.size();

  std::size_t covered_all = 0, guaranteed_and_satisfied = 0;
  for (const auto& trace : test.traces) {
    if (trace.steps.size() < 2) {
      ++stats.skipped_short;
      continue;
    }
    const std::vector<double> actual = cumulative_signal(trace);
    const double rho_actual = robustness(spec, actual);

    bool covered = true, guaranteed = true;
    double rho_hat_min = kInf;
    for (std::size_t tau = 0; tau + 1 < trace.steps.size(); ++tau) {
      const TrajectoryEstimate est = trajectory_estimate(
          std::span(trace.steps.data(), tau + 1), trace.steps[tau + 1].predicted_cost);
      const VerificationVerdict v = verify_step(spec, est, bound);
      rho_hat_min = std::min(rho_hat_min, v.robust_estimate);
      if (v.robust_estimate - rho_actual > bound.value) covered = false;
      if (!v.guaranteed) guaranteed = false;
    }

    VerificationRow row;
    row.query_id = trace.query_id;
    row.rho_hat = rho_hat_min;
    row.rho_actual = rho_actual;
    row.c = bound.value;
    row.guaranteed = guaranteed;
    row.satisfied = rho_actual > 0.0;
    stats.rows.push_back(std::move(row));

    ++stats.test_queries;
    if (covered) ++covered_all;
    if (guaranteed) {
      ++stats.guaranteed_queries;
      if (rho_actual > 0.0) ++guaranteed_and_satisfied;
    } else {
      ++stats.violations;
    }
  }

  if (stats.test_queries == 0) throw PreconditionError("no test trace has at least 2 steps");
  stats.covered_fraction =
      static_cast<double>(covered_all) / static_cast<double>(stats.test_queries);
  stats.guaranteed_satisfied_fraction =
      stats.guaranteed_queries == 0
          ? 1.0
          : static_cast<double>(guaranteed_and_satisfied) /
                static_cast<double>(stats.guaranteed_queries);
  return stats;
}

namespace {

std::vector<double> pooled_step_scores(const Workload& w) {
  std::vector<double> scores;
  for (const auto& t : w.traces)
    for (const auto& s : t.steps) scores.push_back(std::fabs(s.actual_latency - s.predicted_cost));
  return scores;
}

std::vector<double> draw_with_replacement(const std::vector<double>& pool, std::size_t count,
                                          std::mt19937_64& rng) {
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(pool[rng() % pool.size()]);
  return out;
}

double coverage_under(const std::vector<double>& test, double bound) {
  std::size_t covered = 0;
  for (double s : test)
    if (s <= bound) ++covered;
  return static_cast<double>(covered) / static_cast<double>(test.size());
}

}  // namespace

ShiftStats shift_experiment(const Workload& calibration, const Workload& test, double delta,
                            double epsilon, const ExperimentConfig& cfg) {
  if (cfg.iterations == 0) throw ConfigError("need at least one iteration");
  const std::vector<double> cal_pool = pooled_step_scores(calibration);
  const std::vector<double> test_pool = pooled_step_scores(test);
  if (cal_pool.size() < 2 || test_pool.size() < 2)
    throw PreconditionError("need at least 2 scores on each side");

  ShiftStats stats;
  stats.delta = delta;
  stats.epsilon = epsilon;

  {
    std::mt19937_64 rng_cal(derive_seed(cfg.seed, "tv-cal"));
    std::mt19937_64 rng_test(derive_seed(cfg.seed, "tv-test"));
    const auto a = draw_with_replacement(cal_pool, cfg.tv_sample_size, rng_cal);
    const auto b = draw_with_replacement(test_pool, cfg.tv_sample_size, rng_test);
    stats.tv = total_variation(estimate_density(a), estimate_density(b));
  }
  if (epsilon < stats.tv)
    throw PreconditionError("epsilon " + format_double(epsilon) +
                            " is below the measured shift " + format_double(stats.tv));

  const std::size_t draw = cfg.shift_calibration_draw;
  if (draw == 0) throw ConfigError("shift calibration draw must be positive");
  stats.delta_tilde = adjust_delta(delta, draw, epsilon).delta_tilde;

  stats.c = quantile_value(cal_pool, delta);
  stats.c_tilde = quantile_value(cal_pool, stats.delta_tilde);
  stats.coverage_c = coverage_under(test_pool, stats.c);
  stats.coverage_c_tilde = coverage_under(test_pool, stats.c_tilde);

  for (std::size_t m = 0; m < cfg.iterations; ++m) {
    std::mt19937_64 rng(derive_seed(cfg.seed, m));
    const auto cal = draw_with_replacement(cal_pool, draw, rng);
    const auto tst = draw_with_replacement(test_pool, draw, rng);
    const double c = quantile_value(cal, delta);
    const double ct = quantile_value(cal, stats.delta_tilde);
    stats.ec_c.push_back(coverage_under(tst, c));
    stats.ec_c_tilde.push_back(coverage_under(tst, ct));
  }
  if (stats.ec_c.size() >= 2) {
    stats.curve_c = kde_density_curve(stats.ec_c);
    stats.curve_c_tilde = kde_density_curve(stats.ec_c_tilde);
  }
  return stats;
}

void write_coverage_csv(const CoverageResult& r, std::ostream& out) {
  out << "iteration,ec,c\n";
  for (std::size_t i = 0; i < r.ec.size(); ++i)
    out << i << ',' << format_double(r.ec[i]) << ',' << format_double(r.c_values[i]) << '\n';
}

void write_density_csv(const DensityCurve& c, std::ostream& out) {
  out << "coverage,density\n";
  for (std::size_t i = 0; i < c.x.size(); ++i)
    out << format_double(c.x[i]) << ',' << format_double(c.density[i]) << '\n';
}

void write_verification_csv(const VerificationStats& s, std::ostream& out) {
  out << "query_id,rho_hat,rho_actual,c,guaranteed,satisfied\n";
  for (const auto& row : s.rows)
    out << row.query_id << ',' << format_double(row.rho_hat) << ','
        << format_double(row.rho_actual) << ',' << format_double(row.c) << ','
        << (row.guaranteed ? 1 : 0) << ',' << (row.satisfied ? 1 : 0) << '\n';
}

void write_shift_csv(const ShiftStats& s, std::ostream& out) {
  out << "tv,epsilon,delta,delta_tilde,cov_c,cov_c_tilde\n";
  for (std::size_t i = 0; i < s.ec_c.size(); ++i)
    out << format_double(s.tv) << ',' << format_double(s.epsilon) << ',' << format_double(s.delta)
        << ',' << format_double(s.delta_tilde) << ',' << format_double(s.ec_c[i]) << ','
        << format_double(s.ec_c_tilde[i]) << '\n';
}

}  // namespace planbound
