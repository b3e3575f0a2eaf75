#pragma once

#include <cmath>
#include <functional>
#include <utility>

#include "idsee/common.hpp"
#include "idsee/time_grid.hpp"

namespace idsee {

// Rule for path values at times before the retained window [t0, T].
enum class PreHistory { Zero, ConstantExtend };

// A path on (-infty, T] in the fading-memory space: values stored on the
// grid nodes of [t0, T], with the tail before t0 handled analytically by the
// pre-history rule. Carries the decay rate lambda of the weighted sup norm
// sup_{s<=T} e^{lambda s} |x(s)|.
class WeightedPath {
 public:
  WeightedPath(TimeGrid grid, Mat values, double lambda,
               PreHistory rule = PreHistory::Zero)
      : grid_(grid), values_(std::move(values)), lambda_(lambda), rule_(rule) {
    require(lambda > 0.0, "WeightedPath: lambda must be > 0");
    require(values_.cols() == grid_.size(),
            "WeightedPath: values must have one column per grid node");
    if (!values_.allFinite()) throw NonFinite("WeightedPath: non-finite value");
  }

  // Samples fn on the grid. For rule Zero, fn is only read on [t0, T].
  // For ConstantExtend the membership condition e^{lambda s} x(s) -> 0 holds
  // automatically. A zero-rule history handed in as a function is spot-checked
  // below t0: the weighted magnitude must not grow toward -infinity.
  static WeightedPath from_function(const TimeGrid& grid,
                                    const std::function<Vec(double)>& fn,
                                    double lambda,
                                    PreHistory rule = PreHistory::Zero,
                                    bool probe_tail = false) {
    const Vec probe0 = fn(grid.t0());
    Mat vals(probe0.size(), grid.size());
    for (int i = 0; i < grid.size(); ++i) vals.col(i) = fn(grid.node(i));
    if (probe_tail) {
      const double w0 = std::exp(lambda * grid.t0()) * probe0.norm();
      double prev = w0;
      for (double span : {1.0, 5.0, 25.0}) {
        const double s = grid.t0() - span / lambda;
        const double w = std::exp(lambda * s) * fn(s).norm();
        if (w > prev * (1.0 + 1e-6) || w > w0 * (1.0 + 1e-6))
          throw std::invalid_argument(
              "WeightedPath: weighted tail does not vanish at -infinity");
        prev = w;
      }
    }
    return WeightedPath(grid, std::move(vals), lambda, rule);
  }

  const TimeGrid& grid() const { return grid_; }
  const Mat& values() const { return values_; }
  Mat& values() { return values_; }
  double lambda() const { return lambda_; }
  PreHistory rule() const { return rule_; }
  int dim() const { return static_cast<int>(values_.rows()); }

  // Evaluation delta_r: linear interpolation on [t0, T], pre-history rule
  // before t0. r > T is out of range.
  Vec evaluate(double r) const {
    if (r > grid_.horizon() + 1e-12)
      throw OutOfRange("WeightedPath::evaluate: r > T");
    if (r <= grid_.t0()) {
      if (rule_ == PreHistory::Zero && r < grid_.t0() - 1e-12)
        return Vec::Zero(dim());
      return values_.col(0);
    }
    const int j = std::min(grid_.floor_index(r), grid_.num_steps() - 1);
    const double a = (r - grid_.node(j)) / grid_.dt();
    if (a <= 1e-12) return values_.col(j);
    if (a >= 1.0 - 1e-12) return values_.col(j + 1);
    return (1.0 - a) * values_.col(j) + a * values_.col(j + 1);
  }

 private:
  TimeGrid grid_;
  Mat values_;
  double lambda_;
  PreHistory rule_;
};

// sup_{s <= up_to} e^{lambda s} |x(s)| over retained grid nodes, plus the
// analytic pre-history contribution (zero rule: 0; constant-extend: the
// weight e^{lambda s} is increasing, so the tail sup is attained at t0).
inline double weighted_norm(const WeightedPath& x, double up_to) {
  require(up_to <= x.grid().horizon() + 1e-12, "weighted_norm: up_to > T");
  if (!x.values().allFinite()) throw NonFinite("weighted_norm: non-finite value");
  double best = 0.0;
  if (x.rule() == PreHistory::ConstantExtend)
    best = std::exp(x.lambda() * x.grid().t0()) * x.values().col(0).norm();
  const int jmax = x.grid().floor_index(up_to);
  for (int j = 0; j <= jmax; ++j) {
    const double w =
        std::exp(x.lambda() * x.grid().node(j)) * x.values().col(j).norm();
    if (w > best) best = w;
  }
  return best;
}

inline double weighted_norm(const WeightedPath& x) {
  return weighted_norm(x, x.grid().horizon());
}

// Non-anticipative extension: agrees with x on (-infty, t], constant = x(t)
// on (t, T]. Idempotent.
inline WeightedPath freeze_extension(const WeightedPath& x, double t) {
  require(t >= 0.0 && t <= x.grid().horizon(), "freeze_extension: t not in [0, T]");
  const Vec xt = x.evaluate(t);
  Mat vals = x.values();
  for (int j = x.grid().floor_index(t) + 1; j < x.grid().size(); ++j)
    if (x.grid().node(j) > t + 1e-12) vals.col(j) = xt;
  return WeightedPath(x.grid(), std::move(vals), x.lambda(), x.rule());
}

// Smallest lag horizon with e^{-lambda * Theta} <= tol.
inline double truncation_horizon(double lambda, double tol) {
  require(lambda > 0.0, "truncation_horizon: lambda must be > 0");
  if (!(tol > 0.0 && tol < 1.0))
    throw InvalidTolerance("truncation_horizon: tol must be in (0,1)");
  return std::log(1.0 / tol) / lambda;
}

}  // namespace idsee
