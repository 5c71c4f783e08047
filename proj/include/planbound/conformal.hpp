#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "planbound/trace.hpp"

namespace planbound {

// Calibration scores. Latency scores |actual - predicted| are non-negative;
// the runtime-verification layer reuses this type with signed robustness
// differences, so the container itself only requires finite values.
struct ScoreSet {
  std::vector<double> scores;
  std::optional<Pattern> pattern;  // set when the scores belong to one join shape
};

enum class BoundMode { Unified, PatternBased };

std::string_view to_string(BoundMode mode);
BoundMode bound_mode_from_string(std::string_view text);

// A calibrated upper bound C on the non-conformity score. With K calibration
// scores and miscoverage delta, C is the element at 0-based position
// ceil((K+1)(1-delta)) - 1 of the ascending scores extended with +infinity.
// Infinite value means the calibration set was too small to commit to a bound.
struct UpperBound {
  double value = 0.0;
  double delta = 0.0;
  std::size_t k = 0;
  BoundMode mode = BoundMode::Unified;
  std::optional<Pattern> pattern;
};

// Per-step score |actual_latency - predicted_cost| pooled over all steps.
ScoreSet nonconformity_scores(std::span<const StepRecord> steps);

// Smallest K for which the bound above is finite; equivalently the least
// integer K with K >= (1-delta)/delta.
std::size_t min_calibration_size(double delta);  // ConfigError unless 0 < delta < 1

// The score quantile described on UpperBound. Requires 0 < delta < 1.
UpperBound quantile_upper_bound(const ScoreSet& s, double delta,
                                BoundMode mode = BoundMode::Unified);

// Same order statistic but accepting the closed interval [0, 1]; delta = 0
// yields +infinity. The shift-adjusted path needs these edge cases.
double quantile_value(std::span<const double> scores, double delta);

// Score quantiles per join pattern. Patterns whose group is smaller than
// min_calibration_size(delta) land in `insufficient` instead of getting an
// entry; steps without a pattern are counted and skipped.
struct BoundTable {
  double delta = 0.0;
  std::map<Pattern, UpperBound> entries;
  std::vector<std::pair<Pattern, std::size_t>> insufficient;  // (pattern, group size)
  std::size_t patternless_skipped = 0;

  // Largest entry value; stands in for patterns missing from the table.
  double fallback_max() const;  // PreconditionError when there are no entries
};

BoundTable pattern_upper_bounds(std::span<const StepRecord> steps, double delta);

// Two-sided latency band around a prediction, clamped at zero on the left.
struct LatencyInterval {
  double lower = 0.0;
  double upper = 0.0;
  bool operator==(const LatencyInterval&) const = default;
};

LatencyInterval latency_interval(double predicted_cost, const UpperBound& bound);

// Whether a held-out score falls inside the bound (<=, so an infinite bound
// covers everything).
bool covers(const UpperBound& bound, double score);

// Serialization for bound tables and single bounds. A unified bound is stored
// as a table whose sole entry has a null pattern.
nlohmann::ordered_json bound_table_to_json(const BoundTable& table);
BoundTable bound_table_from_json(const nlohmann::json& j);
nlohmann::ordered_json unified_bound_to_json(const UpperBound& bound);
UpperBound unified_bound_from_json(const nlohmann::json& j);

}  // namespace planbound
