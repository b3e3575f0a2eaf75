#include "idsee/delay_ops.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace idsee {

namespace {

double operator_norm(const Mat& k) {
  if (k.size() == 1) return std::abs(k(0, 0));
  return Eigen::JacobiSVD<Mat>(k).singularValues()[0];
}

bool in_horizon(const TimeGrid& g, double t) {
  return t >= -1e-12 && t <= g.horizon() + 1e-12;
}

}  // namespace

Vec interpolate_columns(const Mat& vals, const TimeGrid& grid, double t) {
  if (t < grid.t0() - 1e-12 || t > grid.horizon() + 1e-12)
    return Vec::Zero(vals.rows());
  const int j = std::min(grid.floor_index(t), grid.num_steps() - 1);
  const double a = (t - grid.node(j)) / grid.dt();
  if (a <= 1e-12) return vals.col(j);
  if (a >= 1.0 - 1e-12) return vals.col(j + 1);
  return (1.0 - a) * vals.col(j) + a * vals.col(j + 1);
}

Mat apply_R(const LagKernel& kernel, const DelayMeasure& measure,
            const WeightedPath& Z) {
  const TimeGrid& g = Z.grid();
  require(g.t0() <= -measure.max_lag() + 1e-9,
          "apply_R: grid must retain history down to -theta_max");
  const auto quad = measure.quadrature(g.dt());
  Mat out = Mat::Zero(kernel.rows, g.size());
  for (int j = g.zero_index(); j < g.size(); ++j) {
    const double t = g.node(j);
    Vec acc = Vec::Zero(kernel.rows);
    for (const auto& q : quad) {
      if (q.on_grid) {
        const int lag = static_cast<int>(std::llround(q.theta / g.dt()));
        acc.noalias() += q.weight * (kernel.eval(t, q.theta) * Z.values().col(j - lag));
      } else {
        acc.noalias() += q.weight * (kernel.eval(t, q.theta) * Z.evaluate(t - q.theta));
      }
    }
    if (!acc.allFinite()) throw KernelUnbounded("apply_R: non-finite output");
    out.col(j) = acc;
  }
  return out;
}

Mat apply_R_star(const LagKernel& kernel, const DelayMeasure& measure,
                 const Mat& Q, const TimeGrid& grid) {
  require(Q.cols() == grid.size(), "apply_R_star: Q must be a full-grid matrix");
  const auto quad = measure.quadrature(grid.dt());
  Mat out = Mat::Zero(kernel.cols, grid.size());
  for (int j = 0; j < grid.size(); ++j) {
    const double u = grid.node(j);
    Vec acc = Vec::Zero(kernel.cols);
    for (const auto& q : quad) {
      const double t = u + q.theta;
      if (!in_horizon(grid, t)) continue;
      if (q.on_grid) {
        const int lag = static_cast<int>(std::llround(q.theta / grid.dt()));
        acc.noalias() +=
            q.weight * (kernel.eval(t, q.theta).transpose() * Q.col(j + lag));
      } else {
        acc.noalias() += q.weight * (kernel.eval(t, q.theta).transpose() *
                                     interpolate_columns(Q, grid, t));
      }
    }
    if (!acc.allFinite()) throw KernelUnbounded("apply_R_star: non-finite output");
    out.col(j) = acc;
  }
  return out;
}

double duality_residual(const LagKernel& kernel, const DelayMeasure& measure,
                        const WeightedPath& Z, const Mat& Q) {
  const TimeGrid& g = Z.grid();
  for (int j = 0; j <= g.zero_index(); ++j)
    require(Z.values().col(j).norm() <= 1e-12,
            "duality_residual: Z must vanish on (-infty, 0]");
  const Mat RZ = apply_R(kernel, measure, Z);
  const Mat RsQ = apply_R_star(kernel, measure, Q, g);
  double lhs = 0.0, rhs = 0.0;
  for (int j = g.zero_index(); j < g.size(); ++j)
    lhs += RZ.col(j).dot(Q.col(j));
  for (int j = 0; j < g.size(); ++j)
    rhs += Z.values().col(j).dot(RsQ.col(j));
  return std::abs(lhs - rhs) * g.dt();
}

OperatorBounds operator_bounds(const LagKernel& kernel,
                               const DelayMeasure& measure,
                               const TimeGrid& grid) {
  const auto quad = measure.quadrature(grid.dt());
  OperatorBounds b;
  // Half-step sampling in t covers the off-grid evaluation times u + theta
  // that arise from density midpoints in the adjoint.
  for (int j = 2 * grid.zero_index(); j <= 2 * grid.num_steps(); ++j) {
    const double t = grid.t0() + 0.5 * j * grid.dt();
    double s = 0.0;
    for (const auto& q : quad)
      s += std::abs(q.weight) * operator_norm(kernel.eval(t, q.theta));
    b.M0 = std::max(b.M0, s);
  }
  // Half-step sampling in u covers the off-grid evaluation points of the
  // density quadrature.
  for (int j = 0; j < 2 * grid.size() - 1; ++j) {
    const double u = grid.t0() + 0.5 * j * grid.dt();
    double s = 0.0;
    for (const auto& q : quad) {
      const double t = u + q.theta;
      if (!in_horizon(grid, t)) continue;
      s += std::abs(q.weight) * operator_norm(kernel.eval(t, q.theta));
    }
    b.M = std::max(b.M, s);
  }
  return b;
}

double cv_identity_check(const std::function<double(double, double)>& g,
                         const DelayMeasure& measure, const TimeGrid& grid) {
  const auto quad = measure.quadrature(grid.dt());
  double lhs = 0.0, rhs = 0.0;
  for (const auto& q : quad) {
    const double w = std::abs(q.weight);
    for (int j = grid.zero_index(); j < grid.size(); ++j)
      lhs += w * g(grid.node(j), q.theta);
    for (int j = 0; j < grid.size(); ++j) {
      const double t = grid.node(j) + q.theta;
      if (in_horizon(grid, t)) rhs += w * g(t, q.theta);
    }
  }
  return std::abs(lhs - rhs) * grid.dt();
}

double l2_sq_on_horizon(const Mat& vals, const TimeGrid& grid) {
  double s = 0.0;
  for (int j = grid.zero_index(); j < grid.size(); ++j)
    s += vals.col(j).squaredNorm();
  return s * grid.dt();
}

double l2_sq_full(const Mat& vals, const TimeGrid& grid) {
  double s = 0.0;
  for (int j = 0; j < grid.size(); ++j) s += vals.col(j).squaredNorm();
  return s * grid.dt();
}

std::vector<Mat> adapted_adjoint(const LagKernel& kernel,
                                 const DelayMeasure& measure,
                                 const std::vector<Mat>& Q,
                                 const Ensemble& ensemble,
                                 ConditionalExpectation& estimator) {
  const TimeGrid& g = ensemble.grid();
  const int n = ensemble.n_paths();
  require(static_cast<int>(Q.size()) == n,
          "adapted_adjoint: one Q matrix per trajectory required");
  std::vector<Mat> raw(n);
  for (int i = 0; i < n; ++i) raw[i] = apply_R_star(kernel, measure, Q[i], g);
  std::vector<Mat> out(n, Mat::Zero(kernel.cols, g.size()));
  Mat targets(kernel.cols, n);
  for (int j = g.zero_index(); j < g.size(); ++j) {
    for (int i = 0; i < n; ++i) targets.col(i) = raw[i].col(j);
    const Mat pred = estimator.project(j, targets);
    for (int i = 0; i < n; ++i) out[i].col(j) = pred.col(i);
  }
  return out;
}

}  // namespace idsee
