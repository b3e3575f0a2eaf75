#include "idsee/forward_see.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "idsee/delay_ops.hpp"
#include "idsee/stats.hpp"

namespace idsee {

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(workers);
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int lo = static_cast<int>(static_cast<long long>(n) * w / workers);
    const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
    pool.emplace_back([lo, hi, &fn, &errs, w] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errs)
    if (e) std::rethrow_exception(e);
}

Vec delayed_control(const Mat& control, const TimeGrid& grid,
                    const ScalarControlKernel& phi, const DelayMeasure& measure,
                    double t) {
  const auto quad = measure.quadrature(grid.dt());
  Vec acc = Vec::Zero(control.rows());
  for (const auto& q : quad) {
    const double s = t - q.theta;
    Vec v;
    if (q.on_grid && grid.aligned(t)) {
      const int j = grid.index_of(t) -
                    static_cast<int>(std::llround(q.theta / grid.dt()));
      require(j >= 0, "delayed_control: lag reaches below the retained window");
      v = control.col(j);
    } else {
      require(s >= grid.t0() - 1e-12,
              "delayed_control: lag reaches below the retained window");
      v = interpolate_columns(control, grid, s);
    }
    acc.noalias() += (q.weight * phi.eval(s, t)) * v;
  }
  if (!acc.allFinite()) throw NonFinite("delayed_control: non-finite value");
  return acc;
}

Mat delayed_control_path(const Mat& control, const TimeGrid& grid,
                         const ScalarControlKernel& phi,
                         const DelayMeasure& measure) {
  Mat out = Mat::Zero(control.rows(), grid.size());
  for (int j = grid.zero_index(); j < grid.size(); ++j)
    out.col(j) = delayed_control(control, grid, phi, measure, grid.node(j));
  return out;
}

namespace {

void fill_history(Ensemble& ens, const InitialData& init) {
  const TimeGrid& g = ens.grid();
  for (int i = 0; i < ens.n_paths(); ++i)
    for (int j = 0; j <= g.zero_index(); ++j)
      ens.states(i).col(j) = init.gamma(g.node(j));
}

void check_setup(const Coefficients& coeffs, const ControlProcess& control,
                 const TimeGrid& grid, const SimParams& params) {
  require(coeffs.b && coeffs.sigma, "forward: b and sigma must be set");
  require(coeffs.d > 0 && coeffs.m > 0, "forward: bad dimensions");
  require(control.dim() == coeffs.d_u, "forward: control dimension mismatch");
  require(control.shared() || control.n_paths() == params.n_paths,
          "forward: control must be shared or have one matrix per trajectory");
  require(std::abs(control.grid().dt() - grid.dt()) <= 1e-12 &&
              std::abs(control.grid().t0() - grid.t0()) <= 1e-12 &&
              std::abs(control.grid().horizon() - grid.horizon()) <= 1e-12,
          "forward: control grid must match the state grid");
}

// One explicit Euler sweep for trajectory i. Segments are anchored in
// `seg_source` (equal to `ens.states(i)` in direct mode, the previous iterate
// in Picard mode); the recursion itself writes into ens.states(i).
void euler_sweep(Ensemble& ens, int i, const Mat& seg_source,
                 const Coefficients& coeffs, const Mat& vd,
                 const SimParams& params) {
  const TimeGrid& g = ens.grid();
  Mat& X = ens.states(i);
  const Mat& dW = ens.increments(i);
  const double dt = g.dt();
  for (int j = g.zero_index(); j < g.num_steps(); ++j) {
    const double t = g.node(j);
    const Segment seg(seg_source, g, j, params.rule);
    const Vec v = vd.col(j);
    const Vec drift = coeffs.b(t, seg, v);
    const Mat diff = coeffs.sigma(t, seg, v);
    require(drift.size() == coeffs.d && diff.rows() == coeffs.d &&
                diff.cols() == coeffs.m,
            "forward: coefficient shape mismatch");
    X.col(j + 1) = X.col(j) + dt * drift + diff * dW.col(j - g.zero_index());
    if (!X.col(j + 1).allFinite() ||
        X.col(j + 1).norm() > params.blowup_guard)
      throw Blowup("forward: trajectory exceeded the blow-up guard at t = " +
                   std::to_string(g.node(j + 1)));
  }
}

std::vector<Mat> delayed_controls(const ControlProcess& control,
                                  const ScalarControlKernel& phi,
                                  const DelayMeasure& control_measure,
                                  const TimeGrid& grid, int n_paths) {
  if (control.shared())
    return {delayed_control_path(control.traj(0), grid, phi, control_measure)};
  std::vector<Mat> vd(n_paths);
  for (int i = 0; i < n_paths; ++i)
    vd[i] = delayed_control_path(control.traj(i), grid, phi, control_measure);
  return vd;
}

}  // namespace

Ensemble simulate_forward(const Coefficients& coeffs, const InitialData& init,
                          const ControlProcess& control,
                          const ScalarControlKernel& phi,
                          const DelayMeasure& control_measure,
                          const TimeGrid& grid, const SimParams& params) {
  check_setup(coeffs, control, grid, params);
  Ensemble ens(grid, params.n_paths, coeffs.d, coeffs.m, params.seed,
               params.lambda, params.rule);
  fill_history(ens, init);
  const auto vd =
      delayed_controls(control, phi, control_measure, grid, params.n_paths);
  parallel_for(params.n_paths, params.workers, [&](int i) {
    euler_sweep(ens, i, ens.states(i), coeffs, vd[control.shared() ? 0 : i],
                params);
  });
  return ens;
}

std::pair<Ensemble, PicardReport> picard_solve_forward(
    const Coefficients& coeffs, const InitialData& init,
    const ControlProcess& control, const ScalarControlKernel& phi,
    const DelayMeasure& control_measure, const TimeGrid& grid,
    const SimParams& params, int n_iter, double tol) {
  check_setup(coeffs, control, grid, params);
  require(n_iter >= 1, "picard_solve_forward: n_iter must be >= 1");
  if (!(tol > 0.0)) throw InvalidTolerance("picard_solve_forward: tol <= 0");
  Ensemble ens(grid, params.n_paths, coeffs.d, coeffs.m, params.seed,
               params.lambda, params.rule);
  fill_history(ens, init);
  // Initial iterate: history on (-infty, 0], gamma(0) frozen on (0, T].
  for (int i = 0; i < params.n_paths; ++i)
    for (int j = grid.zero_index() + 1; j < grid.size(); ++j)
      ens.states(i).col(j) = ens.states(i).col(grid.zero_index());
  const auto vd =
      delayed_controls(control, phi, control_measure, grid, params.n_paths);

  PicardReport report;
  std::vector<Mat> prev(params.n_paths);
  std::vector<double> sup_gap(params.n_paths, 0.0);
  int worse_streak = 0;
  for (int n = 0; n < n_iter; ++n) {
    for (int i = 0; i < params.n_paths; ++i) prev[i] = ens.states(i);
    parallel_for(params.n_paths, params.workers, [&](int i) {
      euler_sweep(ens, i, prev[i], coeffs, vd[control.shared() ? 0 : i],
                  params);
      double s = 0.0;
      for (int j = grid.zero_index(); j < grid.size(); ++j)
        s = std::max(s, (ens.states(i).col(j) - prev[i].col(j)).squaredNorm());
      sup_gap[i] = s;
    });
    const double gap = mean(sup_gap);
    report.gaps.push_back(gap);
    report.iterations = n + 1;
    if (gap <= tol) {
      report.converged = true;
      break;
    }
    if (report.gaps.size() >= 2 && gap > report.gaps[report.gaps.size() - 2]) {
      if (++worse_streak >= 3)
        throw NoConvergence(
            "picard_solve_forward: gap grew for 3 consecutive iterations");
    } else {
      worse_streak = 0;
    }
  }
  return {std::move(ens), std::move(report)};
}

StabilityPair stability_check(const Coefficients& c1, const Coefficients& c2,
                              const InitialData& init1, const InitialData& init2,
                              const ControlProcess& control,
                              const ScalarControlKernel& phi,
                              const DelayMeasure& control_measure,
                              const TimeGrid& grid, const SimParams& params) {
  const Ensemble e1 =
      simulate_forward(c1, init1, control, phi, control_measure, grid, params);
  const Ensemble e2 =
      simulate_forward(c2, init2, control, phi, control_measure, grid, params);
  const auto vd =
      delayed_controls(control, phi, control_measure, grid, params.n_paths);

  // Initial gap: squared weighted sup norm of gamma1 - gamma2 up to time 0.
  Mat hist_gap = Mat::Zero(c1.d, grid.size());
  for (int j = 0; j <= grid.zero_index(); ++j)
    hist_gap.col(j) = init1.gamma(grid.node(j)) - init2.gamma(grid.node(j));
  const WeightedPath gap_path(grid, hist_gap, params.lambda, params.rule);
  const double init_gap_sq =
      weighted_norm(gap_path, 0.0) * weighted_norm(gap_path, 0.0);

  std::vector<double> lhs(params.n_paths, 0.0), coeff_gap(params.n_paths, 0.0);
  parallel_for(params.n_paths, params.workers, [&](int i) {
    double sup = 0.0;
    for (int j = grid.zero_index(); j < grid.size(); ++j)
      sup = std::max(sup,
                     (e1.states(i).col(j) - e2.states(i).col(j)).squaredNorm());
    lhs[i] = sup;
    // Coefficient gap evaluated along the second solution's segments.
    double cg = 0.0;
    const Mat& vdi = vd[control.shared() ? 0 : i];
    for (int j = grid.zero_index(); j < grid.num_steps(); ++j) {
      const double t = grid.node(j);
      const Segment seg(e2.states(i), grid, j, params.rule);
      const Vec v = vdi.col(j);
      cg += (c1.b(t, seg, v) - c2.b(t, seg, v)).squaredNorm() * grid.dt();
      cg += (c1.sigma(t, seg, v) - c2.sigma(t, seg, v)).squaredNorm() * grid.dt();
    }
    coeff_gap[i] = cg;
  });
  StabilityPair out;
  out.lhs = mean(lhs);
  out.rhs = init_gap_sq + mean(coeff_gap);
  return out;
}

}  // namespace idsee
