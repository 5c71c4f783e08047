#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "planbound/conformal.hpp"
#include "planbound/stl.hpp"
#include "planbound/trace.hpp"

namespace planbound {

struct PlanNode;
using PlanPtr = std::shared_ptr<const PlanNode>;

// Immutable binary plan tree. Leaves are scans over one relation; interior
// nodes are joins. `relations` lists the covered relation names, sorted.
struct PlanNode {
  Operator op = Operator::SS;
  PlanPtr left, right;
  std::string relation;  // leaves only
  std::vector<std::string> relations;

  bool is_leaf() const { return left == nullptr; }
};

PlanPtr make_scan(Operator op, std::string relation);
PlanPtr make_join(Operator op, PlanPtr l, PlanPtr r);  // children must be disjoint

bool plans_equal(const PlanNode& a, const PlanNode& b);

// Shape of the plan's root join, or nothing for a bare scan.
std::optional<Pattern> extract_pattern(const PlanNode& plan);

// Text form "HJ(HJ(SS(a),SS(b)),SS(c))" and an equivalent JSON tree; both
// round-trip.
std::string plan_to_text(const PlanNode& plan);
PlanPtr plan_from_text(std::string_view text);
nlohmann::ordered_json plan_to_json(const PlanNode& plan);
PlanPtr plan_from_json(const nlohmann::json& j);

// Canonical construction order: join nodes in post-order (children before
// parents, left subtree first). A plan that is a single scan yields itself as
// the only step.
std::vector<const PlanNode*> construction_steps(const PlanNode& plan);

struct Relation {
  std::string name;
  std::uint64_t cardinality = 0;
  bool operator==(const Relation&) const = default;
};

// A join query: relations plus an undirected join graph over them.
struct QuerySpec {
  std::string id;
  std::vector<Relation> relations;
  std::vector<std::pair<std::string, std::string>> join_edges;

  void validate() const;  // unique names, known endpoints, connected graph
  std::uint64_t cardinality_of(const std::string& name) const;
  bool operator==(const QuerySpec&) const = default;
};

nlohmann::ordered_json query_to_json(const QuerySpec& q);
QuerySpec query_from_json(const nlohmann::json& j);

// Predicted execution cost of one plan node (milliseconds).
using CostPredictor = std::function<double(const PlanNode&)>;

enum class SearchMode { Vanilla, CpGuided };
std::string_view to_string(SearchMode mode);
SearchMode search_mode_from_string(std::string_view text);

struct SearchConfig {
  std::size_t beam_size = 8;
  std::size_t n_complete = 5;  // complete plans to collect before stopping
  SearchMode mode = SearchMode::Vanilla;
};

// cost plus the calibrated bound for the plan's root pattern; unseen patterns
// and bare scans fall back to the table's largest entry.
double latency_upper_bound(const PlanNode& plan, double cost, const BoundTable& table);

// A set of disjoint partial plans covering all relations of the query.
// `partials` stays sorted by each partial's first covered relation, which
// fixes the candidate enumeration order.
struct SearchState {
  std::vector<PlanPtr> partials;
  double predicted_cost = 0.0;  // accumulated over the joins built so far
  double latency_ub = 0.0;      // priority used in cp-guided mode
  PlanPtr latest;               // most recently created join
  std::uint64_t seq = 0;        // generation number, final tie-break

  bool complete() const { return partials.size() == 1; }
};

SearchState initial_state(const QuerySpec& query);

// All states reachable by joining two edge-connected partials, paired with
// the predicted cost of the new join. Enumeration order is deterministic:
// partial pairs in sorted order, then HJ/NL/MJ, then both child orders.
std::vector<std::pair<SearchState, double>> explore(const CostPredictor& predictor,
                                                    const SearchState& state,
                                                    const QuerySpec& query);

struct SearchResult {
  PlanPtr plan;
  double predicted_cost = 0.0;
  double latency_ub = 0.0;
  std::size_t expansions = 0;  // states expanded (explore calls)
  std::size_t completed = 0;   // complete states collected
};

// Beam search ordered by accumulated predicted cost. Pops the best state;
// complete states are collected, others expanded; the beam is re-sorted and
// truncated after every expansion; stops once n_complete plans are collected
// or the beam empties.
SearchResult beam_search(const CostPredictor& predictor, const QuerySpec& query,
                         const SearchConfig& config);

// Identical control flow, but states are ordered by latency_upper_bound of
// their newest join instead of raw predicted cost.
SearchResult cp_guided_search(const CostPredictor& predictor, const QuerySpec& query,
                              const SearchConfig& config, const BoundTable& table);

// Conservative stand-in plan: greedy smallest-intermediate-cardinality join
// order using hash joins over sequential scans, smaller input on the left.
PlanPtr fallback_plan(const QuerySpec& query);

// Structural check: binary join tree whose leaves cover the query's relations
// exactly once, scans at leaves, joins inside.
bool validate_plan(const PlanNode& plan, const QuerySpec& query);

// Actual latency of executing one construction step (a join node, or a bare
// scan for single-relation plans).
using StepLatencyFn = std::function<double(const PlanNode& step)>;

struct VerifiedPlanResult {
  PlanPtr plan;
  std::vector<VerificationVerdict> verdicts;
  bool used_fallback = false;
};

// Runs the configured search, then replays the winning plan step by step:
// after each executed step the one-step-ahead trajectory is checked against
// the formula. The first non-guaranteed verdict abandons the plan and returns
// the fallback instead. `table` is required in cp-guided mode.
VerifiedPlanResult plan_with_verification(const CostPredictor& predictor, const QuerySpec& query,
                                          const SearchConfig& config, const StlSpec& spec,
                                          const UpperBound& bound, const StepLatencyFn& step_latency,
                                          const BoundTable* table = nullptr);

}  // namespace planbound
