#include "planbound/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "planbound/errors.hpp"

namespace planbound {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ceil with a small absolute guard so that values like 10 * 0.9, which land a
// hair above the integer they represent, do not round up a full step. Without
// this the quantile index drifts by one for common deltas and the coverage
// target silently moves.
std::size_t guarded_ceil(double x) {
  double c = std::ceil(x - 1e-9);
  if (c < 0.0) c = 0.0;
  return static_cast<std::size_t>(c);
}

// 0-based position of the bound inside the ascending scores extended with
// +infinity at index k. Position == k selects the infinity slot.
std::size_t quantile_position(std::size_t k, double delta) {
  std::size_t c = guarded_ceil(static_cast<double>(k + 1) * (1.0 - delta));
  return c == 0 ? 0 : c - 1;
}

void check_scores_finite(std::span<const double> scores) {
  for (double s : scores)
    if (std::isnan(s) || std::isinf(s)) throw ConfigError("scores must be finite");
}

}  // namespace

std::string_view to_string(BoundMode mode) {
  return mode == BoundMode::Unified ? "unified" : "pattern";
}

BoundMode bound_mode_from_string(std::string_view text) {
  if (text == "unified") return BoundMode::Unified;
  if (text == "pattern") return BoundMode::PatternBased;
  throw ConfigError("unknown bound mode '" + std::string(text) + "'");
}

ScoreSet nonconformity_scores(std::span<const StepRecord> steps) {
  ScoreSet s;
  s.scores.reserve(steps.size());
  for (const auto& r : steps) s.scores.push_back(std::fabs(r.actual_latency - r.predicted_cost));
  return s;
}

std::size_t min_calibration_size(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  // Closed form K >= (1-delta)/delta, then nudged so the answer agrees exactly
  // with the finiteness of the quantile position above.
  auto finite_at = [delta](std::size_t k) { return quantile_position(k, delta) < k; };
  double raw = (1.0 - delta) / delta;
  std::size_t k = raw <= 1.0 ? 1 : static_cast<std::size_t>(std::ceil(raw - 1e-9));
  while (!finite_at(k)) ++k;
  while (k > 1 && finite_at(k - 1)) --k;
  return k;
}

double quantile_value(std::span<const double> scores, double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");
  check_scores_finite(scores);
  const std::size_t k = scores.size();
  std::size_t pos = quantile_position(k, delta);
  if (pos >= k) return kInf;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[pos];
}

UpperBound quantile_upper_bound(const ScoreSet& s, double delta, BoundMode mode) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  UpperBound b;
  b.value = quantile_value(s.scores, delta);
  b.delta = delta;
  b.k = s.scores.size();
  b.mode = mode;
  b.pattern = s.pattern;
  return b;
}

double BoundTable::fallback_max() const {
  if (entries.empty()) throw PreconditionError("bound table has no entries");
  double best = -kInf;
  for (const auto& [pattern, bound] : entries) best = std::max(best, bound.value);
  return best;
}

BoundTable pattern_upper_bounds(std::span<const StepRecord> steps, double delta) {
  const std::size_t need = min_calibration_size(delta);
  BoundTable table;
  table.delta = delta;

  std::map<Pattern, std::vector<double>> groups;
  for (const auto& r : steps) {
    if (!r.pattern) {
      ++table.patternless_skipped;
      continue;
    }
    groups[*r.pattern].push_back(std::fabs(r.actual_latency - r.predicted_cost));
  }

  for (auto& [pattern, scores] : groups) {
    if (scores.size() < need) {
      table.insufficient.emplace_back(pattern, scores.size());
      continue;
    }
    ScoreSet s{std::move(scores), pattern};
    table.entries.emplace(pattern, quantile_upper_bound(s, delta, BoundMode::PatternBased));
  }
  return table;
}

LatencyInterval latency_interval(double predicted_cost, const UpperBound& bound) {
  if (predicted_cost < 0.0) throw ConfigError("predicted cost must be non-negative");
  return {std::max(0.0, predicted_cost - bound.value), predicted_cost + bound.value};
}

bool covers(const UpperBound& bound, double score) { return score <= bound.value; }

namespace {

nlohmann::ordered_json entry_to_json(const std::optional<Pattern>& pattern, const UpperBound& b) {
  nlohmann::ordered_json e;
  if (pattern)
    e["pattern"] = to_string(*pattern);
  else
    e["pattern"] = nullptr;
  e["c"] = b.value;
  e["k"] = b.k;
  return e;
}

}  // namespace

nlohmann::ordered_json bound_table_to_json(const BoundTable& table) {
  nlohmann::ordered_json j;
  j["delta"] = table.delta;
  j["mode"] = "pattern";
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& [pattern, bound] : table.entries)
    j["entries"].push_back(entry_to_json(pattern, bound));
  j["insufficient"] = nlohmann::ordered_json::array();
  for (const auto& [pattern, k] : table.insufficient) {
    nlohmann::ordered_json e;
    e["pattern"] = to_string(pattern);
    e["k"] = k;
    j["insufficient"].push_back(e);
  }
  return j;
}

BoundTable bound_table_from_json(const nlohmann::json& j) {
  BoundTable table;
  try {
    table.delta = j.at("delta").get<double>();
    std::string mode = j.at("mode").get<std::string>();
    if (mode != "pattern" && mode != "unified")
      throw ConfigError("unknown bound mode '" + mode + "'");
    for (const auto& e : j.at("entries")) {
      UpperBound b;
      b.delta = table.delta;
      b.k = e.at("k").get<std::size_t>();
      b.value = e.at("c").get<double>();
      b.mode = BoundMode::PatternBased;
      if (e.at("pattern").is_null())
        throw ConfigError("pattern table entry lacks a pattern");
      b.pattern = pattern_from_string(e.at("pattern").get<std::string>());
      table.entries.emplace(*b.pattern, b);
    }
    if (j.contains("insufficient"))
      for (const auto& e : j.at("insufficient"))
        table.insufficient.emplace_back(pattern_from_string(e.at("pattern").get<std::string>()),
                                        e.at("k").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed bound table: ") + e.what());
  }
  return table;
}

nlohmann::ordered_json unified_bound_to_json(const UpperBound& bound) {
  nlohmann::ordered_json j;
  j["delta"] = bound.delta;
  j["mode"] = "unified";
  j["entries"] = nlohmann::ordered_json::array();
  j["insufficient"] = nlohmann::ordered_json::array();
  if (std::isinf(bound.value)) {
    nlohmann::ordered_json e;
    e["pattern"] = nullptr;
    e["k"] = bound.k;
    j["insufficient"].push_back(e);
  } else {
    j["entries"].push_back(entry_to_json(std::nullopt, bound));
  }
  return j;
}

UpperBound unified_bound_from_json(const nlohmann::json& j) {
  UpperBound b;
  try {
    b.delta = j.at("delta").get<double>();
    b.mode = BoundMode::Unified;
    const auto& entries = j.at("entries");
    if (entries.empty()) {
      b.value = kInf;
      if (j.contains("insufficient") && !j.at("insufficient").empty())
        b.k = j.at("insufficient")[0].at("k").get<std::size_t>();
    } else {
      b.value = entries[0].at("c").get<double>();
      b.k = entries[0].at("k").get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed bound: ") + e.what());
  }
  return b;
}

}  // namespace planbound
