#include "planbound/stl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>

#include "planbound/errors.hpp"

namespace planbound {

struct StlSpec::Node {
  enum class Kind { True, Predicate, Not, And, Always };
  Kind kind = Kind::True;
  double threshold = 0.0;
  bool less = true;  // predicate direction: x < threshold vs x > threshold
  std::size_t lo = 0;
  std::size_t hi = 0;
  bool to_end = false;  // window runs to the last signal index
  std::shared_ptr<const Node> a, b;
};

namespace {

using Node = StlSpec::Node;

std::shared_ptr<Node> make_node(Node::Kind kind) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  return n;
}

double eval(const Node& n, std::span<const double> sig, std::size_t pos) {
  switch (n.kind) {
    case Node::Kind::True:
      return kTrueRobustness;
    case Node::Kind::Predicate:
      return n.less ? n.threshold - sig[pos] : sig[pos] - n.threshold;
    case Node::Kind::Not:
      return -eval(*n.a, sig, pos);
    case Node::Kind::And:
      return std::min(eval(*n.a, sig, pos), eval(*n.b, sig, pos));
    case Node::Kind::Always: {
      const std::size_t last = sig.size() - 1;
      const std::size_t from = pos + n.lo;
      if (from > last) throw PreconditionError("temporal window starts past the end of the signal");
      std::size_t to = n.to_end ? last : pos + n.hi;
      if (to > last) to = last;  // only the observed prefix constrains the formula
      double worst = std::numeric_limits<double>::infinity();
      for (std::size_t t = from; t <= to; ++t) worst = std::min(worst, eval(*n.a, sig, t));
      return worst;
    }
  }
  throw ConfigError("corrupt formula node");
}

}  // namespace

StlSpec StlSpec::truth() { return StlSpec(make_node(Node::Kind::True)); }

StlSpec StlSpec::less_than(double threshold) {
  auto n = make_node(Node::Kind::Predicate);
  n->threshold = threshold;
  n->less = true;
  return StlSpec(std::move(n));
}

StlSpec StlSpec::greater_than(double threshold) {
  auto n = make_node(Node::Kind::Predicate);
  n->threshold = threshold;
  n->less = false;
  return StlSpec(std::move(n));
}

StlSpec StlSpec::negation(StlSpec inner) {
  auto n = make_node(Node::Kind::Not);
  n->a = std::move(inner.root_);
  return StlSpec(std::move(n));
}

StlSpec StlSpec::conjunction(StlSpec lhs, StlSpec rhs) {
  auto n = make_node(Node::Kind::And);
  n->a = std::move(lhs.root_);
  n->b = std::move(rhs.root_);
  return StlSpec(std::move(n));
}

StlSpec StlSpec::always(StlSpec inner) {
  auto n = make_node(Node::Kind::Always);
  n->to_end = true;
  n->a = std::move(inner.root_);
  return StlSpec(std::move(n));
}

StlSpec StlSpec::always(std::size_t a, std::size_t b, StlSpec inner) {
  if (a > b) throw ConfigError("temporal window [a,b] needs a <= b");
  auto n = make_node(Node::Kind::Always);
  n->lo = a;
  n->hi = b;
  n->a = std::move(inner.root_);
  return StlSpec(std::move(n));
}

namespace {

std::string node_to_string(const Node& n) {
  switch (n.kind) {
    case Node::Kind::True:
      return "true";
    case Node::Kind::Predicate:
      return std::string("x") + (n.less ? "<" : ">") + format_double(n.threshold);
    case Node::Kind::Not:
      return "!(" + node_to_string(*n.a) + ")";
    case Node::Kind::And:
      return "(" + node_to_string(*n.a) + ")&(" + node_to_string(*n.b) + ")";
    case Node::Kind::Always:
      if (n.to_end) return "G(" + node_to_string(*n.a) + ")";
      return "G[" + std::to_string(n.lo) + "," + std::to_string(n.hi) + "](" +
             node_to_string(*n.a) + ")";
  }
  return "?";
}

// Recursive-descent parser for the formula mini-language.
class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  StlSpec parse() {
    StlSpec f = formula();
    skip_ws();
    if (pos_ != text_.size()) fail("trailing input");
    return f;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("spec parse error at position " + std::to_string(pos_) + ": " + what +
                      "; grammar: true | x<NUM | x>NUM | !(f) | (f)&(g) | G(f) | G[a,b](f)");
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'");
  }

  double number() {
    skip_ws();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
    if (ec != std::errc{}) fail("expected a number");
    pos_ = static_cast<std::size_t>(ptr - text_.data());
    return v;
  }

  std::size_t index() {
    skip_ws();
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
    if (ec != std::errc{}) fail("expected a non-negative integer");
    pos_ = static_cast<std::size_t>(ptr - text_.data());
    return v;
  }

  StlSpec formula() {
    StlSpec f = unary();
    while (eat('&')) f = StlSpec::conjunction(std::move(f), unary());
    return f;
  }

  StlSpec unary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '!') {
      ++pos_;
      return StlSpec::negation(unary());
    }
    if (c == 'G') {
      ++pos_;
      bool windowed = false;
      std::size_t a = 0, b = 0;
      if (eat('[')) {
        windowed = true;
        a = index();
        expect(',');
        b = index();
        expect(']');
        if (a > b) fail("window needs a <= b");
      }
      expect('(');
      StlSpec inner = formula();
      expect(')');
      return windowed ? StlSpec::always(a, b, std::move(inner)) : StlSpec::always(std::move(inner));
    }
    if (c == '(') {
      ++pos_;
      StlSpec inner = formula();
      expect(')');
      return inner;
    }
    if (c == 'x') {
      ++pos_;
      skip_ws();
      if (pos_ >= text_.size() || (text_[pos_] != '<' && text_[pos_] != '>'))
        fail("expected '<' or '>' after x");
      const bool less = text_[pos_] == '<';
      ++pos_;
      const double th = number();
      return less ? StlSpec::less_than(th) : StlSpec::greater_than(th);
    }
    if (text_.compare(pos_, 4, "true") == 0 || text_.compare(pos_, 4, "True") == 0) {
      pos_ += 4;
      return StlSpec::truth();
    }
    fail("unexpected character");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string StlSpec::to_string() const { return node_to_string(*root_); }

StlSpec parse_spec(std::string_view text) { return Parser(text).parse(); }

double robustness(const StlSpec& spec, std::span<const double> signal) {
  if (signal.empty()) throw PreconditionError("robustness needs a non-empty signal");
  return eval(spec.root(), signal, 0);
}

bool satisfies(const StlSpec& spec, std::span<const double> signal) {
  return robustness(spec, signal) > 0.0;
}

std::vector<double> TrajectoryEstimate::full() const {
  std::vector<double> sig = observed;
  sig.push_back(predicted_next);
  return sig;
}

TrajectoryEstimate trajectory_estimate(std::span<const StepRecord> prefix,
                                       double next_predicted_cost) {
  if (prefix.empty()) throw PreconditionError("trajectory estimate needs at least one observed step");
  if (next_predicted_cost < 0.0) throw ConfigError("predicted cost must be non-negative");
  TrajectoryEstimate est;
  est.observed.reserve(prefix.size());
  double acc = 0.0;
  for (const auto& s : prefix) {
    acc += s.actual_latency;
    est.observed.push_back(acc);
  }
  est.predicted_next = acc + next_predicted_cost;
  est.tau = prefix.size() - 1;
  return est;
}

ScoreSet robustness_scores(const Workload& calibration, const StlSpec& spec) {
  ScoreSet scores;
  for (const auto& trace : calibration.traces) {
    if (!trace.complete) throw PreconditionError("calibration traces must be complete");
    const std::size_t n = trace.steps.size();
    if (n < 2) continue;  // no step has a successor to predict
    const std::vector<double> actual = cumulative_signal(trace);
    const double rho_actual = robustness(spec, actual);
    for (std::size_t tau = 0; tau + 1 < n; ++tau) {
      TrajectoryEstimate est = trajectory_estimate(
          std::span(trace.steps.data(), tau + 1), trace.steps[tau + 1].predicted_cost);
      scores.scores.push_back(robustness(spec, est.full()) - rho_actual);
    }
  }
  return scores;
}

VerificationVerdict verify_step(const StlSpec& spec, const TrajectoryEstimate& estimate,
                                const UpperBound& bound) {
  VerificationVerdict v;
  v.robust_estimate = robustness(spec, estimate.full());
  v.bound = bound.value;
  v.guaranteed = std::isfinite(bound.value) && v.robust_estimate > bound.value;
  v.tau = estimate.tau;
  return v;
}

}  // namespace planbound
