#pragma once

#include <functional>
#include <vector>

#include "idsee/common.hpp"
#include "idsee/ensemble.hpp"
#include "idsee/projection.hpp"
#include "idsee/time_grid.hpp"

namespace idsee {

// Read-only forward view of an extended-grid matrix (columns at times
// k * dt on [0, T + theta_max]) anchored at one column; lags beyond the
// stored window read as zero, matching the zero extension at +infinity.
class FutureSegment {
 public:
  FutureSegment(const Mat& vals, double dt, int anchor)
      : vals_(&vals), dt_(dt), anchor_(anchor) {}

  double anchor_time() const { return anchor_ * dt_; }
  Vec current() const { return vals_->col(anchor_); }

  // Value at anchor_time + theta for theta >= 0 (linear interpolation for
  // off-grid lags, zero beyond the stored window).
  Vec at_lag(double theta) const {
    require(theta >= -1e-12, "FutureSegment: negative lag");
    const double pos = anchor_ + theta / dt_;
    const int j = static_cast<int>(std::floor(pos + 1e-12));
    if (j >= vals_->cols()) return Vec::Zero(vals_->rows());
    const double a = pos - j;
    if (a <= 1e-12) return vals_->col(j);
    if (j + 1 >= vals_->cols()) return (1.0 - a) * vals_->col(j);
    return (1.0 - a) * vals_->col(j) + a * vals_->col(j + 1);
  }

  Vec at_node_lag(int k) const {
    require(k >= 0, "FutureSegment: negative lag");
    if (anchor_ + k >= vals_->cols()) return Vec::Zero(vals_->rows());
    return vals_->col(anchor_ + k);
  }

 private:
  const Mat* vals_;
  double dt_;
  int anchor_;
};

// Terminal prescription on [T, T + theta_max]: Y = xi, Z = eta there.
struct TerminalData {
  std::function<Vec(const Ensemble&, int traj, double t)> xi;
  std::function<Mat(const Ensemble&, int traj, double t)> eta;  // d x m
  double theta_max = 0.0;  // retained anticipation window beyond T
  double beta = 0.0;       // exponential weight for gap/norm reporting
};

// Generator f(t, Y_{t+}, Z_{t+}); the Z segment stores the d x m matrix
// column-stacked into a vector of length d*m.
using AnticipatedGenerator = std::function<Vec(
    double t, int traj, const FutureSegment& Y, const FutureSegment& Z)>;

struct BackwardSolution {
  double dt = 0.0;
  double horizon = 0.0;    // T
  double theta_max = 0.0;  // anticipation window
  int d = 0, m = 0;
  int cols = 0;            // stored columns: times 0, dt, ..., T + theta_max
  int horizon_col = 0;     // column index of time T
  std::vector<Mat> Y;      // per trajectory, d x cols
  std::vector<Mat> Z;      // per trajectory, (d*m) x cols, column-stacked
  std::vector<Mat> f_path; // pathwise generator values at the final iterate
  std::vector<Mat> f_proj; // their per-node projections E_t[f]
  std::vector<double> gaps;  // u^n per Picard iteration
  int iterations = 0;
  bool converged = false;

  double time_of(int k) const { return k * dt; }
  Eigen::Map<const Mat> z_at(int traj, int k) const {
    return Eigen::Map<const Mat>(Z[traj].col(k).data(), d, m);
  }
};

struct IabseeConfig {
  FeatureMap features{2, true, {}, false};
  double ridge = -1.0;
  int n_picard = 10;
  double tol = 1e-12;
  int workers = 1;
};

// Outer Picard iteration around backward-Euler regression Monte Carlo with
// the anticipated argument frozen at the previous iterate.
BackwardSolution solve_iabsee(const AnticipatedGenerator& generator,
                              const TerminalData& terminal,
                              const Ensemble& ensemble,
                              const IabseeConfig& config);

// Mean over trajectories and a node subsample of the squared gap between
// Y(t) and Y(T) + sum f dt - sum Z dW; generator re-evaluated at the
// solution itself.
double backward_residual(const BackwardSolution& solution,
                         const AnticipatedGenerator& generator,
                         const Ensemble& ensemble, int node_stride = 0);

// E int_0^{T+theta_max} e^{beta t} |Z|^2 dt with exact exponential cell
// weights (left-point values).
double weighted_z_norm(const BackwardSolution& solution, double beta);

}  // namespace idsee
