#include "planbound/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "planbound/errors.hpp"
#include "planbound/rng.hpp"

namespace planbound {

std::string_view to_string(JoinGraphStyle s) {
  switch (s) {
    case JoinGraphStyle::Chain: return "chain";
    case JoinGraphStyle::Star: return "star";
    case JoinGraphStyle::Random: return "random";
  }
  return "?";
}

JoinGraphStyle join_graph_style_from_string(std::string_view text) {
  if (text == "chain") return JoinGraphStyle::Chain;
  if (text == "star") return JoinGraphStyle::Star;
  if (text == "random") return JoinGraphStyle::Random;
  throw ConfigError("unknown join graph style '" + std::string(text) + "'");
}

std::vector<QuerySpec> generate_queries(const SchemaSpec& schema, std::size_t count,
                                        std::uint64_t seed) {
  if (count == 0) throw ConfigError("query count must be positive");
  if (schema.relation_count == 0) throw ConfigError("relation count must be positive");
  if (schema.card_min == 0 || schema.card_min > schema.card_max)
    throw ConfigError("cardinality range is empty");
  if (schema.style == JoinGraphStyle::Random &&
      !(schema.edge_probability >= 0.0 && schema.edge_probability <= 1.0))
    throw ConfigError("edge probability must lie in [0, 1]");

  std::vector<QuerySpec> queries;
  queries.reserve(count);
  for (std::size_t qi = 0; qi < count; ++qi) {
    std::mt19937_64 rng(derive_seed(seed, qi));
    QuerySpec q;
    q.id = "q" + std::to_string(qi);
    const std::size_t n = schema.relation_count;
    std::uniform_int_distribution<std::uint64_t> card(schema.card_min, schema.card_max);
    for (std::size_t i = 0; i < n; ++i)
      q.relations.push_back({"r" + std::to_string(i), card(rng)});

    switch (schema.style) {
      case JoinGraphStyle::Chain:
        for (std::size_t i = 0; i + 1 < n; ++i)
          q.join_edges.emplace_back(q.relations[i].name, q.relations[i + 1].name);
        break;
      case JoinGraphStyle::Star:
        for (std::size_t i = 1; i < n; ++i)
          q.join_edges.emplace_back(q.relations[0].name, q.relations[i].name);
        break;
      case JoinGraphStyle::Random: {
        // Random spanning tree first, then optional extra edges.
        for (std::size_t i = 1; i < n; ++i) {
          std::uniform_int_distribution<std::size_t> pick(0, i - 1);
          q.join_edges.emplace_back(q.relations[pick(rng)].name, q.relations[i].name);
        }
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            const auto& u = q.relations[i].name;
            const auto& v = q.relations[j].name;
            bool have = false;
            for (const auto& [a, b] : q.join_edges)
              if ((a == u && b == v) || (a == v && b == u)) have = true;
            if (!have && coin(rng) < schema.edge_probability) q.join_edges.emplace_back(u, v);
          }
        }
        break;
      }
    }
    q.validate();
    queries.push_back(std::move(q));
  }
  return queries;
}

nlohmann::ordered_json latency_model_to_json(const LatencyModel& m) {
  nlohmann::ordered_json j;
  for (const auto& [op, c] : m.coeff) j["coeff"][std::string(to_string(op))] = c;
  j["nested_loop_scale"] = m.nested_loop_scale;
  j["noise_sigma"] = m.noise_sigma;
  j["query_noise_sigma"] = m.query_noise_sigma;
  j["pattern_bias"] = nlohmann::ordered_json::object();
  for (const auto& [p, b] : m.pattern_bias) j["pattern_bias"][to_string(p)] = b;
  return j;
}

LatencyModel latency_model_from_json(const nlohmann::json& j) {
  LatencyModel m;
  try {
    if (j.contains("coeff"))
      for (const auto& [key, value] : j.at("coeff").items())
        m.coeff[operator_from_string(key)] = value.get<double>();
    m.nested_loop_scale = j.value("nested_loop_scale", m.nested_loop_scale);
    m.noise_sigma = j.value("noise_sigma", m.noise_sigma);
    m.query_noise_sigma = j.value("query_noise_sigma", m.query_noise_sigma);
    if (j.contains("pattern_bias"))
      for (const auto& [key, value] : j.at("pattern_bias").items())
        m.pattern_bias[pattern_from_string(key)] = value.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed latency model: ") + e.what());
  }
  return m;
}

double node_cardinality(const PlanNode& node, const QuerySpec& query) {
  if (node.is_leaf()) return static_cast<double>(query.cardinality_of(node.relation));
  return std::max(node_cardinality(*node.left, query), node_cardinality(*node.right, query));
}

double base_latency(const PlanNode& node, const QuerySpec& query, const LatencyModel& model) {
  auto it = model.coeff.find(node.op);
  if (it == model.coeff.end())
    throw ConfigError("latency model has no coefficient for operator '" +
                      std::string(to_string(node.op)) + "'");
  const double c = it->second;
  if (node.is_leaf()) return c * node_cardinality(node, query);
  const double cl = node_cardinality(*node.left, query);
  const double cr = node_cardinality(*node.right, query);
  switch (node.op) {
    case Operator::HJ: return c * (cl + cr);
    case Operator::NL: return c * cl * cr / model.nested_loop_scale;
    case Operator::MJ: return c * (cl + cr) * std::log2(cl + cr);
    default: break;
  }
  throw ConfigError("unexpected operator in base latency");
}

namespace {

// Mean-one lognormal noise factor tied to (seed, tag) so the draw does not
// depend on evaluation order.
double noise_factor(double sigma, std::uint64_t seed, std::string_view tag) {
  if (sigma <= 0.0) return 1.0;
  std::mt19937_64 rng(derive_seed(seed, tag));
  std::normal_distribution<double> normal(0.0, 1.0);
  return std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
}

double step_latency(const PlanNode& node, const QuerySpec& query, const LatencyModel& model,
                    std::uint64_t seed, double query_factor) {
  double lat = base_latency(node, query, model);
  if (auto pattern = extract_pattern(node)) {
    auto it = model.pattern_bias.find(*pattern);
    if (it != model.pattern_bias.end()) lat *= it->second;
  }
  lat *= query_factor;
  lat *= noise_factor(model.noise_sigma, seed, plan_to_text(node));
  return lat;
}

}  // namespace

std::vector<double> true_latency(const PlanNode& plan, const QuerySpec& query,
                                 const LatencyModel& model, std::uint64_t seed) {
  const double query_factor = noise_factor(model.query_noise_sigma, seed, "query-factor");
  std::vector<double> out;
  for (const PlanNode* node : construction_steps(plan))
    out.push_back(step_latency(*node, query, model, seed, query_factor));
  return out;
}

StepLatencyFn step_latency_fn(const QuerySpec& query, const LatencyModel& model,
                              std::uint64_t seed) {
  const double query_factor = noise_factor(model.query_noise_sigma, seed, "query-factor");
  return [query, model, seed, query_factor](const PlanNode& node) {
    return step_latency(node, query, model, seed, query_factor);
  };
}

CostPredictor make_predictor(const QuerySpec& query, const LatencyModel& model,
                             std::map<Pattern, double> predictor_bias) {
  return [query, model, bias = std::move(predictor_bias)](const PlanNode& node) {
    double cost = base_latency(node, query, model);
    if (auto pattern = extract_pattern(node)) {
      auto it = bias.find(*pattern);
      if (it != bias.end()) cost *= it->second;
    }
    return cost;
  };
}

QueryTrace execute_trace(const PlanNode& plan, const QuerySpec& query,
                         const CostPredictor& predictor, const LatencyModel& model,
                         std::string query_id, std::uint64_t seed) {
  QueryTrace trace;
  trace.query_id = std::move(query_id);
  trace.complete = true;
  const std::vector<const PlanNode*> steps = construction_steps(plan);
  const std::vector<double> latencies = true_latency(plan, query, model, seed);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    StepRecord r;
    r.query_id = trace.query_id;
    r.step = static_cast<std::uint32_t>(i);
    r.pattern = extract_pattern(*steps[i]);
    r.predicted_cost = predictor(*steps[i]);
    r.actual_latency = latencies[i];
    trace.steps.push_back(std::move(r));
  }
  return trace;
}

LatencyModel shifted_model(const LatencyModel& model, double shift) {
  if (shift <= -1.0) throw ConfigError("shift must be greater than -1");
  LatencyModel out = model;
  const double amp = 1.0 + shift;
  out.noise_sigma = model.noise_sigma * amp;
  out.query_noise_sigma = model.query_noise_sigma * amp;
  for (auto& [pattern, bias] : out.pattern_bias)
    bias = std::max(0.05, 1.0 + (bias - 1.0) * amp);
  return out;
}

Workload simulate_workload(const WorkloadRecipe& recipe, std::uint64_t seed, std::string label) {
  const std::vector<QuerySpec> queries =
      generate_queries(recipe.schema, recipe.query_count, derive_seed(seed, "queries"));
  Workload w;
  w.label = std::move(label);
  for (const auto& query : queries) {
    const CostPredictor predictor = make_predictor(query, recipe.model, recipe.predictor_bias);
    const SearchResult found = beam_search(predictor, query, recipe.search);
    const std::uint64_t exec_seed = derive_seed(derive_seed(seed, "exec"), query.id);
    w.traces.push_back(
        execute_trace(*found.plan, query, predictor, recipe.model, query.id, exec_seed));
  }
  return w;
}

}  // namespace planbound
