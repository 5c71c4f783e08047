#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "planbound/conformal.hpp"
#include "planbound/trace.hpp"

namespace planbound {

// Robustness value used for the trivially-true formula. Large but finite so
// arithmetic stays well behaved in CSV output.
inline constexpr double kTrueRobustness = 1e18;

// Temporal formulas over a scalar latency signal:
//   true | x<TH | x>TH | !f | f&g | G(f) | G[a,b](f)
// G is "always"; without a window it ranges to the end of the signal.
class StlSpec {
 public:
  static StlSpec truth();
  static StlSpec less_than(double threshold);
  static StlSpec greater_than(double threshold);
  static StlSpec negation(StlSpec inner);
  static StlSpec conjunction(StlSpec lhs, StlSpec rhs);
  static StlSpec always(StlSpec inner);  // whole remaining signal
  static StlSpec always(std::size_t a, std::size_t b, StlSpec inner);

  std::string to_string() const;

  struct Node;
  const Node& root() const { return *root_; }

 private:
  explicit StlSpec(std::shared_ptr<const Node> root) : root_(std::move(root)) {}
  std::shared_ptr<const Node> root_;
};

// Parses the mini-language above. Whitespace is ignored. Malformed input
// raises ConfigError with the offending position and a grammar reminder.
StlSpec parse_spec(std::string_view text);

// Quantitative satisfaction of the formula at position 0 of the signal.
// Positive robustness certifies satisfaction (strictly); negation flips sign,
// conjunction takes the min, G takes the min over its window clipped to the
// available indices. Empty signals and windows starting past the end of the
// signal are errors.
double robustness(const StlSpec& spec, std::span<const double> signal);

bool satisfies(const StlSpec& spec, std::span<const double> signal);  // robustness > 0

// One-step-ahead trajectory: the observed cumulative latencies plus the next
// value predicted as (last observed) + (predicted cost of the next step).
struct TrajectoryEstimate {
  std::vector<double> observed;
  double predicted_next = 0.0;
  std::size_t tau = 0;  // index of the last observed step

  std::vector<double> full() const;  // observed followed by the predicted value
};

TrajectoryEstimate trajectory_estimate(std::span<const StepRecord> prefix,
                                       double next_predicted_cost);

// Signed calibration scores rho(estimate) - rho(actual), pooled over every
// step tau < N-1 of every complete trace with at least two steps.
ScoreSet robustness_scores(const Workload& calibration, const StlSpec& spec);

struct VerificationVerdict {
  double robust_estimate = 0.0;  // rho of the estimated trajectory
  double bound = 0.0;            // calibrated C
  bool guaranteed = false;       // robust_estimate > bound, strictly
  std::size_t tau = 0;
};

VerificationVerdict verify_step(const StlSpec& spec, const TrajectoryEstimate& estimate,
                                const UpperBound& bound);

}  // namespace planbound
