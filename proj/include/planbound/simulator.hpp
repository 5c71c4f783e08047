#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "planbound/search.hpp"
#include "planbound/trace.hpp"

namespace planbound {

enum class JoinGraphStyle { Chain, Star, Random };
std::string_view to_string(JoinGraphStyle s);
JoinGraphStyle join_graph_style_from_string(std::string_view text);

// Shape of the synthetic queries: how many relations, their cardinality
// range, and the join graph topology. Random graphs get a spanning tree plus
// extra edges with the given probability.
struct SchemaSpec {
  std::size_t relation_count = 6;
  std::uint64_t card_min = 100;
  std::uint64_t card_max = 10000;
  JoinGraphStyle style = JoinGraphStyle::Random;
  double edge_probability = 0.25;
};

std::vector<QuerySpec> generate_queries(const SchemaSpec& schema, std::size_t count,
                                        std::uint64_t seed);

// Ground-truth cost model. Per-step latency of a node with child output
// cardinalities cl, cr (or relation cardinality c for scans):
//   SS / IS : coeff * c
//   HJ      : coeff * (cl + cr)
//   NL      : coeff * cl * cr / nested_loop_scale
//   MJ      : coeff * (cl + cr) * log2(cl + cr)
// A join's own output cardinality is max(cl, cr). The realized latency is
// the base value times the pattern bias (if the step's pattern has one),
// times mean-one lognormal noise: one factor shared by the whole query and
// one drawn per step.
struct LatencyModel {
  std::map<Operator, double> coeff = {{Operator::SS, 0.01},
                                      {Operator::IS, 0.005},
                                      {Operator::HJ, 0.02},
                                      {Operator::NL, 0.04},
                                      {Operator::MJ, 0.015}};
  double nested_loop_scale = 1000.0;
  double noise_sigma = 0.25;        // per-step lognormal sigma
  double query_noise_sigma = 0.0;   // per-query shared lognormal sigma
  std::map<Pattern, double> pattern_bias;
};

nlohmann::ordered_json latency_model_to_json(const LatencyModel& m);
LatencyModel latency_model_from_json(const nlohmann::json& j);

double node_cardinality(const PlanNode& node, const QuerySpec& query);
double base_latency(const PlanNode& node, const QuerySpec& query, const LatencyModel& model);

// Realized latency of every construction step, in order. Noise is derived
// from the seed and each node's structure, so the same (plan, seed) pair
// always reproduces the same latencies regardless of evaluation order.
std::vector<double> true_latency(const PlanNode& plan, const QuerySpec& query,
                                 const LatencyModel& model, std::uint64_t seed);

// Per-node view of the same ground truth, for step-by-step verification.
StepLatencyFn step_latency_fn(const QuerySpec& query, const LatencyModel& model,
                              std::uint64_t seed);

// Noise-free cost estimator: base latency times the predictor's own pattern
// bias. The gap between predictor_bias and the model's pattern_bias is what
// calibration measures.
CostPredictor make_predictor(const QuerySpec& query, const LatencyModel& model,
                             std::map<Pattern, double> predictor_bias = {});

// Runs the plan against the model and emits one StepRecord per construction
// step, with costs from the predictor and latencies from the model.
QueryTrace execute_trace(const PlanNode& plan, const QuerySpec& query,
                         const CostPredictor& predictor, const LatencyModel& model,
                         std::string query_id, std::uint64_t seed);

// Amplifies noise and pattern biases by (1 + shift); shift = 0 returns the
// model unchanged.
LatencyModel shifted_model(const LatencyModel& model, double shift);

// One-stop workload generation: queries from the schema, plans from a beam
// search driven by the (possibly biased) predictor, traces from the model.
struct WorkloadRecipe {
  SchemaSpec schema;
  LatencyModel model;
  std::map<Pattern, double> predictor_bias;
  SearchConfig search;
  std::size_t query_count = 100;
};

Workload simulate_workload(const WorkloadRecipe& recipe, std::uint64_t seed,
                           std::string label = "synthetic");

}  // namespace planbound
