#pragma once

#include <cmath>

#include "idsee/common.hpp"

namespace idsee {

// Uniform grid t0 = s_0 < s_1 < ... < s_N = T with t0 <= 0 < T.
// Both t0 and T must be integer multiples of dt (tolerance 1e-9), so that
// node index arithmetic is exact and lag shifts stay on the grid.
class TimeGrid {
 public:
  TimeGrid(double t0, double T, double dt) : t0_(t0), T_(T), dt_(dt) {
    require(dt > 0.0, "TimeGrid: dt must be > 0");
    require(T > 0.0, "TimeGrid: T must be > 0");
    require(t0 <= 0.0, "TimeGrid: t0 must be <= 0");
    const double steps = (T - t0) / dt;
    n_ = static_cast<int>(std::llround(steps));
    require(std::abs(n_ * dt - (T - t0)) <= 1e-9,
            "TimeGrid: (T - t0)/dt must be integral");
    zero_ = static_cast<int>(std::llround(-t0 / dt));
    require(std::abs(zero_ * dt + t0) <= 1e-9,
            "TimeGrid: t0 must be an integer multiple of dt");
  }

  double t0() const { return t0_; }
  double horizon() const { return T_; }
  double dt() const { return dt_; }
  int num_steps() const { return n_; }
  int size() const { return n_ + 1; }
  int zero_index() const { return zero_; }
  int steps_from_zero() const { return n_ - zero_; }

  double node(int i) const { return t0_ + i * dt_; }

  bool aligned(double t, double tol = 1e-9) const {
    const double k = (t - t0_) / dt_;
    return std::abs(k - std::llround(k)) * dt_ <= tol;
  }

  // Exact node index of t; throws if t is not a grid node.
  int index_of(double t) const {
    const double k = (t - t0_) / dt_;
    const int i = static_cast<int>(std::llround(k));
    require(std::abs(i * dt_ + t0_ - t) <= 1e-9, "TimeGrid: time not on grid");
    require(i >= 0 && i <= n_, "TimeGrid: time outside grid range");
    return i;
  }

  // Largest node index with node(i) <= t, clamped to [0, N].
  int floor_index(double t) const {
    int i = static_cast<int>(std::floor((t - t0_) / dt_ + 1e-12));
    if (i < 0) i = 0;
    if (i > n_) i = n_;
    return i;
  }

 private:
  double t0_, T_, dt_;
  int n_, zero_;
};

}  // namespace idsee
