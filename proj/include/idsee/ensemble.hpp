#pragma once

#include <cstdint>
#include <vector>

#include "idsee/common.hpp"
#include "idsee/rng.hpp"
#include "idsee/time_grid.hpp"
#include "idsee/weighted_path.hpp"

namespace idsee {

// A seeded collection of Monte Carlo trajectories on a shared grid. Noise
// increments come from the counter stream keyed by (seed, trajectory, step),
// so any subset can be regenerated bit-identically.
class Ensemble {
 public:
  Ensemble(TimeGrid grid, int n_paths, int d, int m, std::uint64_t seed,
           double lambda, PreHistory rule = PreHistory::Zero)
      : grid_(grid),
        n_(n_paths),
        d_(d),
        m_(m),
        seed_(seed),
        lambda_(lambda),
        rule_(rule),
        rng_(seed) {
    require(n_paths > 0 && d > 0 && m > 0, "Ensemble: bad dimensions");
    const int steps = grid_.steps_from_zero();
    const double sdt = std::sqrt(grid_.dt());
    states_.assign(n_, Mat::Zero(d_, grid_.size()));
    dW_.resize(n_);
    W_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      Mat inc(m_, steps);
      for (int j = 0; j < steps; ++j)
        inc.col(j) = sdt * rng_.normals(static_cast<std::uint64_t>(i),
                                        static_cast<std::uint64_t>(j), m_);
      Mat cum(m_, steps + 1);
      cum.col(0).setZero();
      for (int j = 0; j < steps; ++j) cum.col(j + 1) = cum.col(j) + inc.col(j);
      dW_[i] = std::move(inc);
      W_[i] = std::move(cum);
    }
  }

  const TimeGrid& grid() const { return grid_; }
  int n_paths() const { return n_; }
  int dim() const { return d_; }
  int noise_dim() const { return m_; }
  std::uint64_t seed() const { return seed_; }
  double lambda() const { return lambda_; }
  PreHistory rule() const { return rule_; }

  // State trajectory of path i, columns over the full grid [t0, T].
  const Mat& states(int i) const { return states_[i]; }
  Mat& states(int i) { return states_[i]; }

  // Brownian increment over step j counted from the zero node.
  const Mat& increments(int i) const { return dW_[i]; }
  // Cumulative Brownian path at node zero_index + j.
  const Mat& brownian(int i) const { return W_[i]; }

  WeightedPath path(int i) const {
    return WeightedPath(grid_, states_[i], lambda_, rule_);
  }

 private:
  TimeGrid grid_;
  int n_, d_, m_;
  std::uint64_t seed_;
  double lambda_;
  PreHistory rule_;
  CounterRng rng_;
  std::vector<Mat> states_, dW_, W_;
};

}  // namespace idsee
