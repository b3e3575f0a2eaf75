#include "idsee/smp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "idsee/delay_ops.hpp"
#include "idsee/rng.hpp"

namespace idsee {

namespace {

// Smallest grid-aligned window covering every lag the adjoint generator
// reaches into the future.
double adjoint_window(const HamiltonianContext& ctx, double dt) {
  double m = ctx.coeffs.db_dx.measure.max_lag();
  for (const auto& dk : ctx.coeffs.dsigma_dx)
    m = std::max(m, dk.measure.max_lag());
  if (ctx.dl_dx.K) m = std::max(m, ctx.dl_dx.measure.max_lag());
  return std::ceil(m / dt - 1e-9) * dt;
}

// Pathwise l-gradient adjoint term (R*_l 1)(t) in R^d, zero-extended past T.
Vec l_adjoint_term(const HamiltonianContext& ctx, int traj, double t, double T,
                   const std::vector<DelayMeasure::QuadNode>& quad) {
  Vec acc = Vec::Zero(ctx.coeffs.d);
  if (!ctx.dl_dx.K) return acc;
  for (const auto& q : quad) {
    const double s = t + q.theta;
    if (s < -1e-12 || s > T + 1e-12) continue;
    acc.noalias() += q.weight * ctx.dl_dx.K(s, q.theta, traj).transpose();
  }
  return acc;
}

Mat unstack(const Vec& z, int d, int m) {
  return Eigen::Map<const Mat>(z.data(), d, m);
}

}  // namespace

double hamiltonian_eval(const HamiltonianContext& ctx, double t,
                        const Segment& x, const Vec& v, const Vec& p,
                        const Mat& q) {
  const Vec b = ctx.coeffs.b(t, x, v);
  const Mat s = ctx.coeffs.sigma(t, x, v);
  double out = b.dot(p) + s.cwiseProduct(q).sum();
  if (ctx.l) out += ctx.l(t, x, v);
  return out;
}

AdjointPair solve_adjoint(const HamiltonianContext& ctx, const Ensemble& xu,
                          const IabseeConfig& config) {
  const TimeGrid& g = xu.grid();
  const double T = g.horizon(), dt = g.dt();
  const int d = ctx.coeffs.d, m = ctx.coeffs.m;
  require(static_cast<int>(ctx.coeffs.dsigma_dx.size()) == m,
          "solve_adjoint: one dsigma_dx kernel per noise column required");

  const auto quad_b = ctx.coeffs.db_dx.measure.quadrature(dt);
  std::vector<std::vector<DelayMeasure::QuadNode>> quad_s(m);
  for (int j = 0; j < m; ++j)
    quad_s[j] = ctx.coeffs.dsigma_dx[j].measure.quadrature(dt);
  const auto quad_l = ctx.dl_dx.K ? ctx.dl_dx.measure.quadrature(dt)
                                  : std::vector<DelayMeasure::QuadNode>{};

  TerminalData td;
  td.theta_max = adjoint_window(ctx, dt);
  td.xi = [&ctx, T, d](const Ensemble& e, int i, double t) {
    if (std::abs(t - T) <= 1e-12)
      return Vec(ctx.h_x(e.states(i).col(e.grid().num_steps())));
    return Vec(Vec::Zero(d));
  };
  td.eta = [d, m](const Ensemble&, int, double) { return Mat(Mat::Zero(d, m)); };

  AnticipatedGenerator gen = [&ctx, &quad_b, &quad_s, &quad_l, T, d,
                              m](double t, int i, const FutureSegment& p,
                                 const FutureSegment& z) {
    Vec acc = Vec::Zero(d);
    for (const auto& q : quad_b) {
      const double s = t + q.theta;
      if (s > T + 1e-12) continue;
      acc.noalias() += q.weight * (ctx.coeffs.db_dx.kernel.eval(s, q.theta)
                                       .transpose() *
                                   p.at_lag(q.theta));
    }
    for (int j = 0; j < m; ++j)
      for (const auto& q : quad_s[j]) {
        const double s = t + q.theta;
        if (s > T + 1e-12) continue;
        const Mat zmat = unstack(z.at_lag(q.theta), d, m);
        acc.noalias() +=
            q.weight * (ctx.coeffs.dsigma_dx[j].kernel.eval(s, q.theta)
                            .transpose() *
                        zmat.col(j));
      }
    acc += l_adjoint_term(ctx, i, t, T, quad_l);
    return acc;
  };
  return AdjointPair{solve_iabsee(gen, td, xu, config)};
}

Ensemble solve_variational(const HamiltonianContext& ctx,
                           const ControlProcess& vhat, const TimeGrid& grid,
                           const SimParams& params) {
  const int d = ctx.coeffs.d, m = ctx.coeffs.m;
  const auto quad_b = ctx.coeffs.db_dx.measure.quadrature(grid.dt());
  std::vector<std::vector<DelayMeasure::QuadNode>> quad_s(m);
  for (int j = 0; j < m; ++j)
    quad_s[j] = ctx.coeffs.dsigma_dx[j].measure.quadrature(grid.dt());

  Coefficients lin;
  lin.d = d;
  lin.m = m;
  lin.d_u = ctx.coeffs.d_u;
  lin.b = [&ctx, quad_b, d](double t, const Segment& x, const Vec& v) {
    Vec acc = ctx.coeffs.b_v(t) * v;
    for (const auto& q : quad_b)
      acc.noalias() +=
          q.weight * (ctx.coeffs.db_dx.kernel.eval(t, q.theta) * x.at_lag(q.theta));
    return acc;
  };
  lin.sigma = [&ctx, quad_s, d, m](double t, const Segment& x, const Vec& v) {
    Mat acc(d, m);
    for (int j = 0; j < m; ++j) {
      acc.col(j) = ctx.coeffs.sigma_v(t, j) * v;
      for (const auto& q : quad_s[j])
        acc.col(j).noalias() += q.weight * (ctx.coeffs.dsigma_dx[j].kernel
                                                .eval(t, q.theta) *
                                            x.at_lag(q.theta));
    }
    return acc;
  };
  lin.b_v = ctx.coeffs.b_v;
  lin.sigma_v = ctx.coeffs.sigma_v;
  InitialData zero_init{[d](double) { return Vec(Vec::Zero(d)); },
                        [&ctx](double) { return Vec(Vec::Zero(ctx.coeffs.d_u)); }};
  SimParams p = params;
  p.rule = PreHistory::Zero;
  return simulate_forward(lin, zero_init, vhat, ctx.phi, ctx.control_measure,
                          grid, p);
}

CostReport cost_evaluate_generic(const HamiltonianContext& ctx,
                                 const Ensemble& ens,
                                 const ControlProcess& control) {
  const TimeGrid& g = ens.grid();
  const int n = ens.n_paths();
  Mat vd_shared;
  if (control.shared())
    vd_shared = delayed_control_path(control.traj(0), g, ctx.phi,
                                     ctx.control_measure);
  std::vector<double> cost(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const Mat vd = control.shared()
                       ? vd_shared
                       : delayed_control_path(control.traj(i), g, ctx.phi,
                                              ctx.control_measure);
    double c = 0.0;
    for (int j = g.zero_index(); j < g.num_steps(); ++j) {
      const Segment seg(ens.states(i), g, j, ens.rule());
      c += ctx.l(g.node(j), seg, vd.col(j)) * g.dt();
    }
    c += ctx.h(ens.states(i).col(g.num_steps()));
    cost[i] = c;
  }
  MeanSE ms = batch_mean_se(cost);
  return {ms.mean, ms.se};
}

namespace {

// Pathwise control gradient of the Hamiltonian along u on [0, T]:
// H_v(s) = b_v(s)^T p(s) + sum_j sigma_v(s,j)^T q_j(s) + l_v(s, v_d(s)).
Mat hv_path(const HamiltonianContext& ctx, const BackwardSolution& sol,
            const Mat& vd, const TimeGrid& g, int traj) {
  const int N = sol.horizon_col;
  Mat hv = Mat::Zero(ctx.coeffs.d_u, N + 1);
  for (int k = 0; k <= N; ++k) {
    const double s = k * g.dt();
    Vec acc = ctx.coeffs.b_v(s).transpose() * sol.Y[traj].col(k);
    const Mat q = sol.z_at(traj, k);
    for (int j = 0; j < ctx.coeffs.m; ++j)
      acc.noalias() += ctx.coeffs.sigma_v(s, j).transpose() * q.col(j);
    if (ctx.l_v) acc += ctx.l_v(s, vd.col(g.zero_index() + k));
    hv.col(k) = acc;
  }
  return hv;
}

}  // namespace

ResidualTable necessary_residual(const HamiltonianContext& ctx,
                                 const ControlProcess& u, const Ensemble& xu,
                                 const AdjointPair& adjoint,
                                 const std::vector<Vec>& probes,
                                 const std::vector<int>& nodes,
                                 const IabseeConfig& config) {
  const TimeGrid& g = xu.grid();
  const double T = g.horizon(), dt = g.dt();
  const int n = xu.n_paths();
  const BackwardSolution& sol = adjoint.backward();
  const auto quad = ctx.control_measure.quadrature(dt);

  Mat vd_shared;
  if (u.shared())
    vd_shared = delayed_control_path(u.traj(0), g, ctx.phi, ctx.control_measure);
  std::vector<Mat> hv(n);
  for (int i = 0; i < n; ++i) {
    const Mat vd = u.shared() ? vd_shared
                              : delayed_control_path(u.traj(i), g, ctx.phi,
                                                     ctx.control_measure);
    hv[i] = hv_path(ctx, sol, vd, g, i);
  }

  ConditionalExpectation ce(xu, config.features, config.ridge);
  ResidualTable table;
  table.nodes = nodes;
  table.probes = probes;
  table.value = Mat::Zero(static_cast<int>(nodes.size()),
                          static_cast<int>(probes.size()));
  table.se = table.value;
  table.min_value = std::numeric_limits<double>::infinity();
  table.min_se = 0.0;

  Mat targets(ctx.coeffs.d_u, n);
  std::vector<double> vals(n);
  for (std::size_t a = 0; a < nodes.size(); ++a) {
    const int node = nodes[a];
    const int k = node - g.zero_index();
    require(k >= 0 && k <= sol.horizon_col,
            "necessary_residual: node outside [0, T]");
    const double t = k * dt;
    table.times.push_back(t);
    for (int i = 0; i < n; ++i) {
      Vec acc = Vec::Zero(ctx.coeffs.d_u);
      const FutureSegment fut(hv[i], dt, k);
      for (const auto& q : quad) {
        const double s = t + q.theta;
        if (s > T + 1e-12) continue;  // H_v zero-extended past T
        acc.noalias() += (q.weight * ctx.phi.eval(t, s)) * fut.at_lag(q.theta);
      }
      targets.col(i) = acc;
    }
    const Mat G = ce.project(node, targets);
    for (std::size_t b = 0; b < probes.size(); ++b) {
      for (int i = 0; i < n; ++i)
        vals[i] = G.col(i).dot(probes[b] - u.at(u.shared() ? 0 : i, node));
      const MeanSE ms = batch_mean_se(vals);
      table.value(a, b) = ms.mean;
      table.se(a, b) = ms.se;
      if (ms.mean < table.min_value) {
        table.min_value = ms.mean;
        table.min_se = ms.se;
      }
    }
  }
  return table;
}

GateauxReport gateaux_derivative(const HamiltonianContext& ctx,
                                 const InitialData& init,
                                 const ControlProcess& u,
                                 const ControlProcess& vhat,
                                 const TimeGrid& grid, const SimParams& params,
                                 const std::vector<double>& eps_ladder) {
  require(!eps_ladder.empty(), "gateaux_derivative: empty eps ladder");
  GateauxReport rep;
  double jscale = 1.0;
  for (double eps : eps_ladder) {
    const ControlProcess up = u.scaled_plus(1.0, vhat, eps);
    const ControlProcess um = u.scaled_plus(1.0, vhat, -eps);
    const Ensemble ep = simulate_forward(ctx.coeffs, init, up, ctx.phi,
                                         ctx.control_measure, grid, params);
    const Ensemble em = simulate_forward(ctx.coeffs, init, um, ctx.phi,
                                         ctx.control_measure, grid, params);
    const double jp = cost_evaluate_generic(ctx, ep, up).J;
    const double jm = cost_evaluate_generic(ctx, em, um).J;
    jscale = std::max({jscale, std::abs(jp), std::abs(jm)});
    const double diff = jp - jm;
    if (diff != 0.0 && std::abs(diff) < 10.0 * 2.2e-16 * jscale)
      throw StepTooSmall("gateaux_derivative: difference below fp noise");
    rep.fd_ladder.push_back(diff / (2.0 * eps));
  }
  // Central differences have O(eps^2) error; Richardson over the last pair
  // assuming the ladder decreases by factors of 10.
  if (rep.fd_ladder.size() >= 2) {
    const double f_coarse = rep.fd_ladder[rep.fd_ladder.size() - 2];
    const double f_fine = rep.fd_ladder.back();
    rep.fd = f_fine + (f_fine - f_coarse) / 99.0;
  } else {
    rep.fd = rep.fd_ladder.back();
  }

  // Analytic expression via the variational state.
  const Ensemble xu = simulate_forward(ctx.coeffs, init, u, ctx.phi,
                                       ctx.control_measure, grid, params);
  const Ensemble xhat = solve_variational(ctx, vhat, grid, params);
  const TimeGrid& g = grid;
  const int n = params.n_paths;
  const auto quad_l = ctx.dl_dx.K ? ctx.dl_dx.measure.quadrature(g.dt())
                                  : std::vector<DelayMeasure::QuadNode>{};
  Mat vd_u_shared, vd_h_shared;
  if (u.shared())
    vd_u_shared = delayed_control_path(u.traj(0), g, ctx.phi, ctx.control_measure);
  if (vhat.shared())
    vd_h_shared =
        delayed_control_path(vhat.traj(0), g, ctx.phi, ctx.control_measure);
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i) {
    const Mat vd_u = u.shared()
                         ? vd_u_shared
                         : delayed_control_path(u.traj(i), g, ctx.phi,
                                                ctx.control_measure);
    const Mat vd_h = vhat.shared()
                         ? vd_h_shared
                         : delayed_control_path(vhat.traj(i), g, ctx.phi,
                                                ctx.control_measure);
    double acc = 0.0;
    for (int j = g.zero_index(); j < g.num_steps(); ++j) {
      const double t = g.node(j);
      double dl = 0.0;
      const Segment hat_seg(xhat.states(i), g, j, PreHistory::Zero);
      for (const auto& q : quad_l)
        dl += q.weight *
              (ctx.dl_dx.K(t, q.theta, i) * hat_seg.at_lag(q.theta))(0, 0);
      if (ctx.l_v) dl += ctx.l_v(t, vd_u.col(j)).dot(vd_h.col(j));
      acc += dl * g.dt();
    }
    acc += ctx.h_x(xu.states(i).col(g.num_steps()))
               .dot(xhat.states(i).col(g.num_steps()));
    vals[i] = acc;
  }
  const MeanSE ms = batch_mean_se(vals);
  rep.analytic = ms.mean;
  rep.se = ms.se;
  return rep;
}

DualityReport duality_bookkeeping(const HamiltonianContext& ctx,
                                  const InitialData& init,
                                  const ControlProcess& u,
                                  const ControlProcess& vhat,
                                  const TimeGrid& grid, const SimParams& params,
                                  const IabseeConfig& config) {
  const TimeGrid& g = grid;
  const double T = g.horizon(), dt = g.dt();
  const int n = params.n_paths, m = ctx.coeffs.m;
  const Ensemble xu = simulate_forward(ctx.coeffs, init, u, ctx.phi,
                                       ctx.control_measure, grid, params);
  const AdjointPair adj = solve_adjoint(ctx, xu, config);
  const Ensemble xhat = solve_variational(ctx, vhat, grid, params);
  const BackwardSolution& sol = adj.backward();
  const auto quad_l = ctx.dl_dx.K ? ctx.dl_dx.measure.quadrature(dt)
                                  : std::vector<DelayMeasure::QuadNode>{};

  Mat vd_h_shared;
  if (vhat.shared())
    vd_h_shared =
        delayed_control_path(vhat.traj(0), g, ctx.phi, ctx.control_measure);
  std::vector<double> lhs(n), rhs(n), gap(n);
  for (int i = 0; i < n; ++i) {
    const Mat vd_h = vhat.shared()
                         ? vd_h_shared
                         : delayed_control_path(vhat.traj(i), g, ctx.phi,
                                                ctx.control_measure);
    lhs[i] = ctx.h_x(xu.states(i).col(g.num_steps()))
                 .dot(xhat.states(i).col(g.num_steps()));
    double acc = 0.0;
    for (int k = 0; k < sol.horizon_col; ++k) {
      const double t = k * dt;
      const int j = g.zero_index() + k;
      acc += sol.Y[i].col(k).dot(ctx.coeffs.b_v(t) * vd_h.col(j));
      const Mat q = sol.z_at(i, k);
      for (int jj = 0; jj < m; ++jj)
        acc += q.col(jj).dot(ctx.coeffs.sigma_v(t, jj) * vd_h.col(j));
      acc -= l_adjoint_term(ctx, i, t, T, quad_l)
                 .dot(xhat.states(i).col(j));
    }
    rhs[i] = acc * dt;
    gap[i] = lhs[i] - rhs[i];
  }
  DualityReport rep;
  rep.lhs = batch_mean_se(lhs);
  rep.rhs = batch_mean_se(rhs);
  rep.gap = batch_mean_se(gap);
  return rep;
}

ConvexityReport sufficient_conditions_probe(const HamiltonianContext& ctx,
                                            int samples, std::uint64_t seed) {
  const int d = ctx.coeffs.d, m = ctx.coeffs.m, du = ctx.coeffs.d_u;
  CounterRng rng(seed);
  // Constant segments on a small scratch grid.
  TimeGrid g(-1.0, 1.0, 0.25);
  const double t = 0.5, fd_h = 1e-4;
  ConvexityReport rep;
  rep.min_gap_H = std::numeric_limits<double>::infinity();
  rep.min_gap_h = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    Vec x(d), x2(d), v(du), v2(du), p(d);
    Mat q(d, m);
    for (int a = 0; a < d; ++a) {
      x[a] = rng.normal(s, 0, a);
      x2[a] = rng.normal(s, 1, a);
      p[a] = rng.normal(s, 2, a);
      for (int b = 0; b < m; ++b) q(a, b) = rng.normal(s, 3, a * m + b);
    }
    for (int a = 0; a < du; ++a) {
      v[a] = rng.normal(s, 4, a);
      v2[a] = rng.normal(s, 5, a);
    }
    auto H = [&](const Vec& xx, const Vec& vv) {
      Mat vals = xx.replicate(1, g.size());
      const Segment seg(vals, g, g.index_of(t), PreHistory::ConstantExtend);
      return hamiltonian_eval(ctx, t, seg, vv, p, q);
    };
    // Central-difference gradient at (x, v); exact for quadratic H.
    double lin = 0.0;
    for (int a = 0; a < d; ++a) {
      Vec xp = x, xm = x;
      xp[a] += fd_h;
      xm[a] -= fd_h;
      lin += (H(xp, v) - H(xm, v)) / (2.0 * fd_h) * (x2[a] - x[a]);
    }
    for (int a = 0; a < du; ++a) {
      Vec vp = v, vm = v;
      vp[a] += fd_h;
      vm[a] -= fd_h;
      lin += (H(x, vp) - H(x, vm)) / (2.0 * fd_h) * (v2[a] - v[a]);
    }
    const double gap_H = H(x2, v2) - H(x, v) - lin;
    rep.min_gap_H = std::min(rep.min_gap_H, gap_H);
    const double gap_h =
        ctx.h(x2) - ctx.h(x) - ctx.h_x(x).dot(x2 - x);
    rep.min_gap_h = std::min(rep.min_gap_h, gap_h);
    if (gap_H < -1e-10 || gap_h < -1e-10) ++rep.violations;
  }
  return rep;
}

}  // namespace idsee
