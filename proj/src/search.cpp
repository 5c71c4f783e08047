#include "planbound/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>

#include "planbound/errors.hpp"

namespace planbound {

PlanPtr make_scan(Operator op, std::string relation) {
  if (!is_scan(op)) throw ConfigError("leaf operator must be a scan");
  if (relation.empty()) throw ConfigError("scan needs a relation name");
  auto node = std::make_shared<PlanNode>();
  node->op = op;
  node->relation = relation;
  node->relations = {std::move(relation)};
  return node;
}

PlanPtr make_join(Operator op, PlanPtr l, PlanPtr r) {
  if (!is_join(op)) throw ConfigError("join operator expected");
  if (!l || !r) throw ConfigError("join needs two children");
  auto node = std::make_shared<PlanNode>();
  node->op = op;
  node->relations.resize(l->relations.size() + r->relations.size());
  auto end = std::set_union(l->relations.begin(), l->relations.end(), r->relations.begin(),
                            r->relations.end(), node->relations.begin());
  if (end != node->relations.end()) throw ConfigError("join children share relations");
  node->left = std::move(l);
  node->right = std::move(r);
  return node;
}

bool plans_equal(const PlanNode& a, const PlanNode& b) {
  if (a.op != b.op || a.is_leaf() != b.is_leaf()) return false;
  if (a.is_leaf()) return a.relation == b.relation;
  return plans_equal(*a.left, *b.left) && plans_equal(*a.right, *b.right);
}

std::optional<Pattern> extract_pattern(const PlanNode& plan) {
  if (plan.is_leaf()) return std::nullopt;
  return Pattern{plan.op, plan.left->op, plan.right->op};
}

std::string plan_to_text(const PlanNode& plan) {
  std::string out(to_string(plan.op));
  out += '(';
  if (plan.is_leaf()) {
    out += plan.relation;
  } else {
    out += plan_to_text(*plan.left);
    out += ',';
    out += plan_to_text(*plan.right);
  }
  out += ')';
  return out;
}

namespace {

class PlanTextParser {
 public:
  explicit PlanTextParser(std::string_view text) : text_(text) {}

  PlanPtr parse() {
    PlanPtr p = node();
    if (pos_ != text_.size()) fail("trailing input");
    return p;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("plan parse error at position " + std::to_string(pos_) + ": " + what);
  }

  void expect(char c) {
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  PlanPtr node() {
    if (pos_ + 2 > text_.size()) fail("expected an operator code");
    Operator op;
    try {
      op = operator_from_string(text_.substr(pos_, 2));
    } catch (const ConfigError& e) {
      fail(e.what());
    }
    pos_ += 2;
    expect('(');
    PlanPtr result;
    if (is_scan(op)) {
      std::size_t start = pos_;
      while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
                                     text_[pos_] == '_' || text_[pos_] == '-'))
        ++pos_;
      if (pos_ == start) fail("expected a relation name");
      result = make_scan(op, std::string(text_.substr(start, pos_ - start)));
    } else {
      PlanPtr l = node();
      expect(',');
      PlanPtr r = node();
      result = make_join(op, std::move(l), std::move(r));
    }
    expect(')');
    return result;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

PlanPtr plan_from_text(std::string_view text) { return PlanTextParser(text).parse(); }

nlohmann::ordered_json plan_to_json(const PlanNode& plan) {
  nlohmann::ordered_json j;
  j["op"] = to_string(plan.op);
  if (plan.is_leaf()) {
    j["relation"] = plan.relation;
  } else {
    j["children"] = nlohmann::ordered_json::array({plan_to_json(*plan.left), plan_to_json(*plan.right)});
  }
  return j;
}

PlanPtr plan_from_json(const nlohmann::json& j) {
  try {
    Operator op = operator_from_string(j.at("op").get<std::string>());
    if (is_scan(op)) return make_scan(op, j.at("relation").get<std::string>());
    const auto& children = j.at("children");
    if (!children.is_array() || children.size() != 2)
      throw ConfigError("join node needs exactly 2 children");
    return make_join(op, plan_from_json(children[0]), plan_from_json(children[1]));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed plan json: ") + e.what());
  }
}

namespace {

void collect_joins(const PlanNode& plan, std::vector<const PlanNode*>& out) {
  if (plan.is_leaf()) return;
  collect_joins(*plan.left, out);
  collect_joins(*plan.right, out);
  out.push_back(&plan);
}

}  // namespace

std::vector<const PlanNode*> construction_steps(const PlanNode& plan) {
  std::vector<const PlanNode*> steps;
  if (plan.is_leaf()) {
    steps.push_back(&plan);
    return steps;
  }
  collect_joins(plan, steps);
  return steps;
}

void QuerySpec::validate() const {
  if (relations.empty()) throw ConfigError("query has no relations");
  std::set<std::string> names;
  for (const auto& r : relations) {
    if (r.name.empty()) throw ConfigError("relation with empty name");
    if (r.cardinality == 0) throw ConfigError("relation '" + r.name + "' has zero cardinality");
    if (!names.insert(r.name).second) throw ConfigError("duplicate relation '" + r.name + "'");
  }
  for (const auto& [u, v] : join_edges) {
    if (!names.count(u) || !names.count(v))
      throw ConfigError("join edge (" + u + ", " + v + ") references an unknown relation");
    if (u == v) throw ConfigError("self-loop join edge on '" + u + "'");
  }
  if (relations.size() > 1) {
    // Union-find connectivity over the join graph.
    std::map<std::string, std::string> parent;
    for (const auto& r : relations) parent[r.name] = r.name;
    std::function<std::string(const std::string&)> find = [&](const std::string& x) {
      return parent[x] == x ? x : parent[x] = find(parent[x]);
    };
    for (const auto& [u, v] : join_edges) parent[find(u)] = find(v);
    const std::string root = find(relations.front().name);
    for (const auto& r : relations)
      if (find(r.name) != root) throw ConfigError("join graph is not connected");
  }
}

std::uint64_t QuerySpec::cardinality_of(const std::string& name) const {
  for (const auto& r : relations)
    if (r.name == name) return r.cardinality;
  throw ConfigError("unknown relation '" + name + "'");
}

nlohmann::ordered_json query_to_json(const QuerySpec& q) {
  nlohmann::ordered_json j;
  j["id"] = q.id;
  j["relations"] = nlohmann::ordered_json::array();
  for (const auto& r : q.relations)
    j["relations"].push_back({{"name", r.name}, {"cardinality", r.cardinality}});
  j["join_edges"] = nlohmann::ordered_json::array();
  for (const auto& [u, v] : q.join_edges) j["join_edges"].push_back({u, v});
  return j;
}

QuerySpec query_from_json(const nlohmann::json& j) {
  QuerySpec q;
  try {
    q.id = j.value("id", "");
    for (const auto& r : j.at("relations"))
      q.relations.push_back({r.at("name").get<std::string>(), r.at("cardinality").get<std::uint64_t>()});
    for (const auto& e : j.at("join_edges")) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("join edge must be a 2-element array");
      q.join_edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed query json: ") + e.what());
  }
  q.validate();
  return q;
}

std::string_view to_string(SearchMode mode) {
  return mode == SearchMode::Vanilla ? "vanilla" : "cp";
}

SearchMode search_mode_from_string(std::string_view text) {
  if (text == "vanilla") return SearchMode::Vanilla;
  if (text == "cp") return SearchMode::CpGuided;
  throw ConfigError("unknown search mode '" + std::string(text) + "'");
}

double latency_upper_bound(const PlanNode& plan, double cost, const BoundTable& table) {
  const double fallback = table.fallback_max();  // errors on an empty table
  const std::optional<Pattern> pattern = extract_pattern(plan);
  if (pattern) {
    auto it = table.entries.find(*pattern);
    if (it != table.entries.end()) return cost + it->second.value;
  }
  return cost + fallback;
}

SearchState initial_state(const QuerySpec& query) {
  query.validate();
  SearchState s;
  for (const auto& r : query.relations) s.partials.push_back(make_scan(Operator::SS, r.name));
  std::sort(s.partials.begin(), s.partials.end(),
            [](const PlanPtr& a, const PlanPtr& b) { return a->relations.front() < b->relations.front(); });
  return s;
}

namespace {

constexpr Operator kJoinOps[] = {Operator::HJ, Operator::NL, Operator::MJ};

}  // namespace

std::vector<std::pair<SearchState, double>> explore(const CostPredictor& predictor,
                                                    const SearchState& state,
                                                    const QuerySpec& query) {
  // Which partial currently covers each relation.
  std::map<std::string, std::size_t> owner;
  for (std::size_t i = 0; i < state.partials.size(); ++i)
    for (const auto& rel : state.partials[i]->relations) owner[rel] = i;

  std::set<std::pair<std::size_t, std::size_t>> joinable;
  for (const auto& [u, v] : query.join_edges) {
    const std::size_t a = owner.at(u), b = owner.at(v);
    if (a != b) joinable.insert({std::min(a, b), std::max(a, b)});
  }

  std::vector<std::pair<SearchState, double>> out;
  for (const auto& [i, j] : joinable) {
    for (Operator op : kJoinOps) {
      for (int order = 0; order < 2; ++order) {
        PlanPtr l = order == 0 ? state.partials[i] : state.partials[j];
        PlanPtr r = order == 0 ? state.partials[j] : state.partials[i];
        PlanPtr joined = make_join(op, std::move(l), std::move(r));
        const double step_cost = predictor(*joined);

        SearchState child;
        child.partials.reserve(state.partials.size() - 1);
        for (std::size_t k = 0; k < state.partials.size(); ++k)
          if (k != i && k != j) child.partials.push_back(state.partials[k]);
        child.partials.push_back(joined);
        std::sort(child.partials.begin(), child.partials.end(),
                  [](const PlanPtr& a, const PlanPtr& b) {
                    return a->relations.front() < b->relations.front();
                  });
        child.predicted_cost = state.predicted_cost + step_cost;
        child.latest = std::move(joined);
        out.emplace_back(std::move(child), step_cost);
      }
    }
  }
  return out;
}

namespace {

// Priority tuple: cp-guided mode leads with the latency upper bound, vanilla
// with the accumulated predicted cost; both then fall back to cost and the
// generation number so ordering is total and deterministic.
std::tuple<double, double, std::uint64_t> sort_key(const SearchState& s, bool cp) {
  return {cp ? s.latency_ub : s.predicted_cost, s.predicted_cost, s.seq};
}

SearchResult run_search(const CostPredictor& predictor, const QuerySpec& query,
                        const SearchConfig& config, const BoundTable* table) {
  if (config.beam_size == 0) throw ConfigError("beam size must be positive");
  if (config.n_complete == 0) throw ConfigError("need at least one complete plan");
  query.validate();
  const bool cp = table != nullptr;
  if (cp && table->entries.empty()) throw PreconditionError("bound table has no entries");

  std::uint64_t next_seq = 0;
  std::vector<SearchState> beam{initial_state(query)};
  std::vector<SearchState> complete;
  std::size_t expansions = 0;

  while (complete.size() < config.n_complete && !beam.empty()) {
    SearchState state = std::move(beam.front());
    beam.erase(beam.begin());
    if (state.complete()) {
      complete.push_back(std::move(state));
      continue;
    }
    ++expansions;
    for (auto& [child, step_cost] : explore(predictor, state, query)) {
      (void)step_cost;
      child.seq = ++next_seq;
      child.latency_ub =
          cp ? latency_upper_bound(*child.latest, child.predicted_cost, *table) : child.predicted_cost;
      beam.push_back(std::move(child));
    }
    std::stable_sort(beam.begin(), beam.end(), [cp](const SearchState& a, const SearchState& b) {
      return sort_key(a, cp) < sort_key(b, cp);
    });
    if (beam.size() > config.beam_size) beam.resize(config.beam_size);
  }

  if (complete.empty()) throw PreconditionError("search found no complete plan");
  std::stable_sort(complete.begin(), complete.end(),
                   [cp](const SearchState& a, const SearchState& b) {
                     return sort_key(a, cp) < sort_key(b, cp);
                   });
  const SearchState& best = complete.front();
  return {best.partials.front(), best.predicted_cost, best.latency_ub, expansions, complete.size()};
}

}  // namespace

SearchResult beam_search(const CostPredictor& predictor, const QuerySpec& query,
                         const SearchConfig& config) {
  return run_search(predictor, query, config, nullptr);
}

SearchResult cp_guided_search(const CostPredictor& predictor, const QuerySpec& query,
                              const SearchConfig& config, const BoundTable& table) {
  return run_search(predictor, query, config, &table);
}

PlanPtr fallback_plan(const QuerySpec& query) {
  query.validate();

  struct Active {
    PlanPtr plan;
    double cardinality;
  };
  std::vector<Active> active;
  {
    std::vector<Relation> rels = query.relations;
    std::sort(rels.begin(), rels.end(),
              [](const Relation& a, const Relation& b) { return a.name < b.name; });
    for (const auto& r : rels)
      active.push_back({make_scan(Operator::SS, r.name), static_cast<double>(r.cardinality)});
  }

  while (active.size() > 1) {
    std::map<std::string, std::size_t> owner;
    for (std::size_t i = 0; i < active.size(); ++i)
      for (const auto& rel : active[i].plan->relations) owner[rel] = i;

    std::set<std::pair<std::size_t, std::size_t>> joinable;
    for (const auto& [u, v] : query.join_edges) {
      const std::size_t a = owner.at(u), b = owner.at(v);
      if (a != b) joinable.insert({std::min(a, b), std::max(a, b)});
    }
    if (joinable.empty()) throw ConfigError("join graph is not connected");

    // Cheapest estimated intermediate result first.
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [i, j] : joinable) {
      const double est = active[i].cardinality * active[j].cardinality;
      if (est < best) {
        best = est;
        bi = i;
        bj = j;
      }
    }

    // Smaller input drives the hash side (left child); ties by name order.
    Active small = active[bi], big = active[bj];
    if (big.cardinality < small.cardinality ||
        (big.cardinality == small.cardinality &&
         big.plan->relations.front() < small.plan->relations.front()))
      std::swap(small, big);

    Active joined{make_join(Operator::HJ, small.plan, big.plan),
                  std::max(small.cardinality, big.cardinality)};
    std::vector<Active> next;
    for (std::size_t k = 0; k < active.size(); ++k)
      if (k != bi && k != bj) next.push_back(std::move(active[k]));
    next.push_back(std::move(joined));
    std::sort(next.begin(), next.end(), [](const Active& a, const Active& b) {
      return a.plan->relations.front() < b.plan->relations.front();
    });
    active = std::move(next);
  }
  return active.front().plan;
}

namespace {

bool collect_leaves(const PlanNode& plan, std::vector<std::string>& leaves) {
  if (plan.is_leaf()) {
    if (!is_scan(plan.op)) return false;
    leaves.push_back(plan.relation);
    return true;
  }
  if (!is_join(plan.op) || !plan.left || !plan.right) return false;
  return collect_leaves(*plan.left, leaves) && collect_leaves(*plan.right, leaves);
}

}  // namespace

bool validate_plan(const PlanNode& plan, const QuerySpec& query) {
  std::vector<std::string> leaves;
  if (!collect_leaves(plan, leaves)) return false;
  std::sort(leaves.begin(), leaves.end());
  if (std::adjacent_find(leaves.begin(), leaves.end()) != leaves.end()) return false;
  std::vector<std::string> expected;
  for (const auto& r : query.relations) expected.push_back(r.name);
  std::sort(expected.begin(), expected.end());
  return leaves == expected;
}

VerifiedPlanResult plan_with_verification(const CostPredictor& predictor, const QuerySpec& query,
                                          const SearchConfig& config, const StlSpec& spec,
                                          const UpperBound& bound, const StepLatencyFn& step_latency,
                                          const BoundTable* table) {
  if (config.mode == SearchMode::CpGuided && table == nullptr)
    throw ConfigError("cp-guided planning needs a bound table");

  const SearchResult found = config.mode == SearchMode::CpGuided
                                 ? cp_guided_search(predictor, query, config, *table)
                                 : beam_search(predictor, query, config);

  const std::vector<const PlanNode*> steps = construction_steps(*found.plan);
  std::vector<StepRecord> records;
  records.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    StepRecord r;
    r.query_id = query.id;
    r.step = static_cast<std::uint32_t>(i);
    r.pattern = extract_pattern(*steps[i]);
    r.predicted_cost = predictor(*steps[i]);
    r.actual_latency = step_latency(*steps[i]);
    records.push_back(std::move(r));
  }

  VerifiedPlanResult out;
  out.plan = found.plan;
  for (std::size_t tau = 0; tau + 1 < records.size(); ++tau) {
    TrajectoryEstimate est = trajectory_estimate(std::span(records.data(), tau + 1),
                                                 records[tau + 1].predicted_cost);
    VerificationVerdict v = verify_step(spec, est, bound);
    out.verdicts.push_back(v);
    if (!v.guaranteed) {
      out.plan = fallback_plan(query);
      out.used_fallback = true;
      return out;
    }
  }
  return out;
}

}  // namespace planbound
