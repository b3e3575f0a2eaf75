#include "idsee/iabsee.hpp"

#include <algorithm>
#include <cmath>

#include "idsee/forward_see.hpp"
#include "idsee/stats.hpp"

namespace idsee {

namespace {

int aligned_steps(double span, double dt, const char* what) {
  const int k = static_cast<int>(std::llround(span / dt));
  require(k >= 0 && std::abs(k * dt - span) <= 1e-9, what);
  return k;
}

}  // namespace

BackwardSolution solve_iabsee(const AnticipatedGenerator& generator,
                              const TerminalData& terminal,
                              const Ensemble& ensemble,
                              const IabseeConfig& config) {
  require(static_cast<bool>(generator), "solve_iabsee: generator must be set");
  require(static_cast<bool>(terminal.xi), "solve_iabsee: terminal xi must be set");
  require(config.n_picard >= 1, "solve_iabsee: n_picard must be >= 1");
  if (!(config.tol > 0.0)) throw InvalidTolerance("solve_iabsee: tol <= 0");

  const TimeGrid& g = ensemble.grid();
  const double dt = g.dt();
  const int n = ensemble.n_paths();
  const int d = ensemble.dim(), m = ensemble.noise_dim();
  const int N = g.steps_from_zero();
  const int n_theta = aligned_steps(terminal.theta_max, dt,
                                    "solve_iabsee: theta_max must be a "
                                    "multiple of dt");

  BackwardSolution sol;
  sol.dt = dt;
  sol.horizon = g.horizon();
  sol.theta_max = terminal.theta_max;
  sol.d = d;
  sol.m = m;
  sol.cols = N + n_theta + 1;
  sol.horizon_col = N;
  sol.Y.assign(n, Mat::Zero(d, sol.cols));
  sol.Z.assign(n, Mat::Zero(d * m, sol.cols));
  sol.f_path.assign(n, Mat::Zero(d, N));
  sol.f_proj.assign(n, Mat::Zero(d, N));

  // Terminal pinning on [T, T + theta_max]; never touched afterwards.
  for (int i = 0; i < n; ++i)
    for (int k = N; k < sol.cols; ++k) {
      const double t = k * dt;
      const Vec xi = terminal.xi(ensemble, i, t);
      require(xi.size() == d, "solve_iabsee: xi dimension mismatch");
      sol.Y[i].col(k) = xi;
      if (terminal.eta) {
        const Mat eta = terminal.eta(ensemble, i, t);
        require(eta.rows() == d && eta.cols() == m,
                "solve_iabsee: eta shape mismatch");
        sol.Z[i].col(k) = Eigen::Map<const Vec>(eta.data(), d * m);
      }
    }

  ConditionalExpectation ce(ensemble, config.features, config.ridge);
  std::vector<Mat> prevY(n), prevZ(n);
  std::vector<double> sup_gap(n, 0.0);
  // One stacked target block per node: [Y-targets; Z-targets; f-targets].
  Mat targets(d + d * m + d, n);
  int worse_streak = 0;
  for (int it = 0; it < config.n_picard; ++it) {
    for (int i = 0; i < n; ++i) {
      prevY[i] = sol.Y[i];
      prevZ[i] = sol.Z[i];
    }
    for (int j = N - 1; j >= 0; --j) {
      const double t = j * dt;
      parallel_for(n, config.workers, [&](int i) {
        const Vec y_next = sol.Y[i].col(j + 1);
        const Vec dw = ensemble.increments(i).col(j);
        const FutureSegment fy(prevY[i], dt, j), fz(prevZ[i], dt, j);
        const Vec f = generator(t, i, fy, fz);
        if (static_cast<int>(f.size()) != d || !f.allFinite())
          throw NonFinite("solve_iabsee: bad generator value");
        targets.col(i).head(d) = y_next + dt * f;
        const Mat zt = y_next * dw.transpose() / dt;
        targets.col(i).segment(d, d * m) =
            Eigen::Map<const Vec>(zt.data(), d * m);
        targets.col(i).tail(d) = f;
        sol.f_path[i].col(j) = f;
      });
      const Mat pred = ce.project(g.zero_index() + j, targets);
      for (int i = 0; i < n; ++i) {
        sol.Y[i].col(j) = pred.col(i).head(d);
        sol.Z[i].col(j) = pred.col(i).segment(d, d * m);
        sol.f_proj[i].col(j) = pred.col(i).tail(d);
      }
    }
    parallel_for(n, config.workers, [&](int i) {
      double s = 0.0;
      for (int k = 0; k <= N; ++k)
        s = std::max(s, std::exp(terminal.beta * k * dt) *
                            (sol.Y[i].col(k) - prevY[i].col(k)).squaredNorm());
      sup_gap[i] = s;
    });
    const double gap = mean(sup_gap);
    sol.gaps.push_back(gap);
    sol.iterations = it + 1;
    if (gap <= config.tol) {
      sol.converged = true;
      break;
    }
    if (sol.gaps.size() >= 2 && gap >= sol.gaps[sol.gaps.size() - 2]) {
      if (++worse_streak >= 3)
        throw NoConvergence(
            "solve_iabsee: Picard gap non-decreasing for 3 iterations");
    } else {
      worse_streak = 0;
    }
  }
  return sol;
}

double backward_residual(const BackwardSolution& solution,
                         const AnticipatedGenerator& generator,
                         const Ensemble& ensemble, int node_stride) {
  const int N = solution.horizon_col;
  const int n = static_cast<int>(solution.Y.size());
  const double dt = solution.dt;
  if (node_stride <= 0) node_stride = std::max(1, N / 16);
  std::vector<double> acc(n, 0.0);
  int n_nodes = 0;
  for (int j = 0; j < N; j += node_stride) ++n_nodes;
  for (int i = 0; i < n; ++i) {
    // Suffix sums of f dt and Z dW from T downwards.
    Vec tail = Vec::Zero(solution.d);
    int next_sample = ((N - 1) / node_stride) * node_stride;
    double s = 0.0;
    for (int j = N - 1; j >= 0; --j) {
      const FutureSegment fy(solution.Y[i], dt, j), fz(solution.Z[i], dt, j);
      const Vec f = generator(j * dt, i, fy, fz);
      const Vec dw = ensemble.increments(i).col(j);
      tail += dt * f - solution.z_at(i, j) * dw;
      if (j == next_sample) {
        const Vec resid =
            solution.Y[i].col(j) - (solution.Y[i].col(N) + tail);
        s += resid.squaredNorm();
        next_sample -= node_stride;
      }
    }
    acc[i] = s / std::max(1, n_nodes);
  }
  return mean(acc);
}

double weighted_z_norm(const BackwardSolution& solution, double beta) {
  const int n = static_cast<int>(solution.Z.size());
  const double dt = solution.dt;
  std::vector<double> acc(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = 0; k + 1 < solution.cols; ++k) {
      const double t0 = k * dt, t1 = (k + 1) * dt;
      const double w =
          beta > 0.0 ? (std::exp(beta * t1) - std::exp(beta * t0)) / beta : dt;
      s += w * solution.Z[i].col(k).squaredNorm();
    }
    acc[i] = s;
  }
  return mean(acc);
}

}  // namespace idsee
