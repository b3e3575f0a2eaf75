#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "idsee/common.hpp"
#include "idsee/delay_measure.hpp"
#include "idsee/ensemble.hpp"
#include "idsee/lag_kernel.hpp"
#include "idsee/time_grid.hpp"
#include "idsee/weighted_path.hpp"

namespace idsee {

// Read-only view of the past trajectory X_t anchored at a grid node.
// Only lags >= 0 can be read; the pre-history rule covers s < t0.
class Segment {
 public:
  Segment(const Mat& vals, const TimeGrid& grid, int anchor, PreHistory rule)
      : vals_(&vals), grid_(&grid), anchor_(anchor), rule_(rule) {}

  double anchor_time() const { return grid_->node(anchor_); }
  int anchor_node() const { return anchor_; }
  const TimeGrid& grid() const { return *grid_; }

  Vec current() const { return vals_->col(anchor_); }

  // X(anchor - k*dt) for integer k >= 0.
  Vec at_node_lag(int k) const {
    require(k >= 0, "Segment: negative lag");
    const int j = anchor_ - k;
    if (j >= 0) return vals_->col(j);
    if (rule_ == PreHistory::Zero) return Vec::Zero(vals_->rows());
    return vals_->col(0);
  }

  // X(anchor_time - theta) with linear interpolation for off-grid lags.
  Vec at_lag(double theta) const {
    require(theta >= -1e-12, "Segment: negative lag");
    const double s = anchor_time() - theta;
    if (s <= grid_->t0() + 1e-12) {
      if (rule_ == PreHistory::Zero && s < grid_->t0() - 1e-12)
        return Vec::Zero(vals_->rows());
      return vals_->col(0);
    }
    const int j = std::min(grid_->floor_index(s), anchor_ - 1);
    const double a = (s - grid_->node(j)) / grid_->dt();
    if (a <= 1e-12) return vals_->col(j);
    if (a >= 1.0 - 1e-12) return vals_->col(j + 1);
    return (1.0 - a) * vals_->col(j) + a * vals_->col(j + 1);
  }

 private:
  const Mat* vals_;
  const TimeGrid* grid_;
  int anchor_;
  PreHistory rule_;
};

// A non-anticipative path derivative in lag-kernel form: the pair (K, alpha)
// with (dPhi)(Z)(t) = int K(t,theta) Z(t-theta) alpha(dtheta).
struct DerivKernel {
  LagKernel kernel;
  DelayMeasure measure;
};

// Coefficients of the controlled equation together with the derivative data
// the variational/adjoint machinery needs.
struct Coefficients {
  int d = 1, m = 1, d_u = 1;
  std::function<Vec(double, const Segment&, const Vec&)> b;
  std::function<Mat(double, const Segment&, const Vec&)> sigma;  // d x m
  DerivKernel db_dx;
  std::vector<DerivKernel> dsigma_dx;        // one entry per noise column
  std::function<Mat(double)> b_v;            // d x d_u
  std::function<Mat(double, int)> sigma_v;   // noise column j: d x d_u
};

struct InitialData {
  std::function<Vec(double)> gamma;   // state history on (-infty, 0]
  std::function<Vec(double)> varphi;  // control history on (-infty, 0]
};

// Control process on (-infty, T]: deterministic history varphi before 0,
// per-trajectory (or shared deterministic) values on the grid.
class ControlProcess {
 public:
  // Deterministic control, shared by all trajectories.
  ControlProcess(const TimeGrid& grid, int d_u,
                 const std::function<Vec(double)>& fn)
      : grid_(grid), d_u_(d_u), shared_(true) {
    vals_.resize(1, Mat::Zero(d_u, grid.size()));
    for (int j = 0; j < grid.size(); ++j) vals_[0].col(j) = fn(grid.node(j));
  }

  // Per-trajectory control; history columns must already be filled.
  ControlProcess(const TimeGrid& grid, int d_u, std::vector<Mat> values)
      : grid_(grid), d_u_(d_u), shared_(false), vals_(std::move(values)) {
    for (const Mat& v : vals_)
      require(v.rows() == d_u && v.cols() == grid.size(),
              "ControlProcess: bad value shape");
  }

  const TimeGrid& grid() const { return grid_; }
  int dim() const { return d_u_; }
  bool shared() const { return shared_; }
  int n_paths() const { return static_cast<int>(vals_.size()); }

  const Mat& traj(int i) const { return shared_ ? vals_[0] : vals_[i]; }
  Mat& traj_mut(int i) { return shared_ ? vals_[0] : vals_[i]; }

  Vec at(int i, int node) const { return traj(i).col(node); }

  // a * this + c * dir. A shared base with a per-trajectory direction (or
  // vice versa) is materialized to per-trajectory storage.
  ControlProcess scaled_plus(double a, const ControlProcess& dir, double c) const {
    ControlProcess out = *this;
    if (out.shared_ && !dir.shared_) {
      out.vals_.assign(dir.vals_.size(), vals_[0]);
      out.shared_ = false;
    }
    for (auto& v : out.vals_) v *= a;
    for (std::size_t k = 0; k < out.vals_.size(); ++k)
      out.vals_[k] += c * dir.traj(static_cast<int>(k));
    return out;
  }

 private:
  TimeGrid grid_;
  int d_u_;
  bool shared_;
  std::vector<Mat> vals_;
};

// v_d(t) = int phi(t-theta, t) v(t-theta) alpha(dtheta) at one grid node.
Vec delayed_control(const Mat& control, const TimeGrid& grid,
                    const ScalarControlKernel& phi, const DelayMeasure& measure,
                    double t);

// Delayed control along the whole grid for one trajectory (columns before the
// zero node are zero).
Mat delayed_control_path(const Mat& control, const TimeGrid& grid,
                         const ScalarControlKernel& phi,
                         const DelayMeasure& measure);

struct SimParams {
  int n_paths = 1;
  std::uint64_t seed = 1;
  double lambda = 1.0;
  PreHistory rule = PreHistory::Zero;
  int workers = 1;
  double blowup_guard = 1e12;
};

// Explicit Euler-Maruyama for the controlled infinitely delayed equation.
Ensemble simulate_forward(const Coefficients& coeffs, const InitialData& init,
                          const ControlProcess& control,
                          const ScalarControlKernel& phi,
                          const DelayMeasure& control_measure,
                          const TimeGrid& grid, const SimParams& params);

struct PicardReport {
  std::vector<double> gaps;  // k^n = E[sup |X^(n+1) - X^(n)|^2] per iteration
  int iterations = 0;
  bool converged = false;
};

// Picard fixed-point mode on the same grid and noise as the Euler mode
// (stochastic integrals as left-point sums).
std::pair<Ensemble, PicardReport> picard_solve_forward(
    const Coefficients& coeffs, const InitialData& init,
    const ControlProcess& control, const ScalarControlKernel& phi,
    const DelayMeasure& control_measure, const TimeGrid& grid,
    const SimParams& params, int n_iter, double tol);

struct StabilityPair {
  double lhs = 0.0;  // E[sup |X1 - X2|^2]
  double rhs = 0.0;  // initial-gap + coefficient-gap bracket
};

StabilityPair stability_check(const Coefficients& c1, const Coefficients& c2,
                              const InitialData& init1, const InitialData& init2,
                              const ControlProcess& control,
                              const ScalarControlKernel& phi,
                              const DelayMeasure& control_measure,
                              const TimeGrid& grid, const SimParams& params);

// Runs fn(i) for i in [0, n) over a fixed chunk layout; results must be
// written to per-index slots so the outcome is independent of worker count.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace idsee
