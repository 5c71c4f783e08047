#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "planbound/errors.hpp"

namespace planbound {

// Physical operators appearing in plan traces. SS/IS are scans, the rest are
// binary joins.
enum class Operator : std::uint8_t { SS, IS, HJ, NL, MJ };

constexpr bool is_scan(Operator op) { return op == Operator::SS || op == Operator::IS; }
constexpr bool is_join(Operator op) { return !is_scan(op); }

std::string_view to_string(Operator op);
Operator operator_from_string(std::string_view text);  // throws ConfigError on unknown code

// Shape of a join step: the join operator plus the root operators of its two
// children. Serialized as "HJ|SS|SS".
struct Pattern {
  Operator parent;
  Operator left;
  Operator right;
  auto operator<=>(const Pattern&) const = default;
};

std::string to_string(const Pattern& p);
Pattern pattern_from_string(std::string_view text);

// One executed step of a query plan. Scan-only (single relation) plans carry
// no pattern; join steps do. Costs and latencies are in milliseconds.
struct StepRecord {
  std::string query_id;
  std::uint32_t step = 0;
  std::optional<Pattern> pattern;
  double predicted_cost = 0.0;
  double actual_latency = 0.0;
  bool operator==(const StepRecord&) const = default;
};

// All steps of one query, ordered by step index (dense 0..N-1). `complete`
// is false only for prefixes captured mid-construction.
struct QueryTrace {
  std::string query_id;
  std::vector<StepRecord> steps;
  bool complete = true;
  bool operator==(const QueryTrace&) const = default;
};

struct Workload {
  std::vector<QueryTrace> traces;
  std::string label;
  bool operator==(const Workload&) const = default;
  std::size_t total_steps() const;
};

enum class TraceFormat { Jsonl, Csv };

// Reads a workload from a stream. Lines are grouped by query_id (first
// appearance order) and validated: finite non-negative numbers, no duplicate
// (query_id, step), step indices dense from 0. Errors carry the 1-based line.
Workload parse_workload(std::istream& in, TraceFormat format, std::string label = "");
void serialize_workload(const Workload& w, std::ostream& out, TraceFormat format);

// File variants; the format comes from the extension (.jsonl / .csv).
Workload load_workload(const std::string& path, std::string label = "");
void save_workload(const Workload& w, const std::string& path);

// Deterministic partition for calibration/test. The calibration side gets
// floor(fraction * n + 0.5) traces, chosen by a seeded Fisher-Yates shuffle;
// both sides keep the original trace order.
std::pair<Workload, Workload> split_workload(const Workload& w, double calibration_fraction,
                                             std::uint64_t seed);

// Running sum of actual latencies; the signal temporal-logic layer consumes
// these cumulative values.
std::vector<double> cumulative_signal(const QueryTrace& trace);

// Shortest round-trip decimal formatting (used by every serializer so that
// reruns are byte-identical).
std::string format_double(double v);

}  // namespace planbound
