#include <doctest.h>

#include <cmath>
#include <memory>

#include "idsee/smp.hpp"
#include "idsee/stats.hpp"

using namespace idsee;

namespace {

Vec e1(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

DerivKernel scalar_dirac(double coeff, double lag = 0.0) {
  return {LagKernel::scalar(1, [coeff](double, double) { return coeff; }),
          DelayMeasure::dirac(lag)};
}

DerivKernel empty_kernel() { return {LagKernel::identity(1), DelayMeasure()}; }

// Scalar controlled dynamics b = a x(t) + a1 x(t - lag1) + bv v,
// sigma = s0 + s1 x(t) + sv v, with matching derivative kernels.
Coefficients linear_coeffs(double a, double bv, double s0, double a1 = 0.0,
                           double lag1 = 0.0, double s1 = 0.0,
                           double sv = 0.0) {
  Coefficients c;
  c.d = c.m = c.d_u = 1;
  c.b = [a, a1, lag1, bv](double, const Segment& x, const Vec& v) {
    Vec out = a * x.current() + bv * v;
    if (a1 != 0.0) out += a1 * x.at_lag(lag1);
    return out;
  };
  c.sigma = [s0, s1, sv](double, const Segment& x, const Vec& v) {
    return Mat(e1(s0) + s1 * x.current() + sv * v);
  };
  if (a1 != 0.0)
    c.db_dx = {LagKernel::scalar(1,
                                 [a, a1, lag1](double, double theta) {
                                   return std::abs(theta - lag1) < 1e-12 ? a1
                                                                         : a;
                                 }),
               DelayMeasure({{0.0, 1.0}, {lag1, 1.0}})};
  else
    c.db_dx = scalar_dirac(a);
  c.dsigma_dx = {s1 != 0.0 ? scalar_dirac(s1) : empty_kernel()};
  c.b_v = [bv](double) { return Mat(e1(bv)); };
  c.sigma_v = [sv](double, int) { return Mat(e1(sv)); };
  return c;
}

HamiltonianContext quadratic_ctx(const Coefficients& coeffs, double qx,
                                 double r, double hT) {
  HamiltonianContext ctx;
  ctx.coeffs = coeffs;
  ctx.l = [qx, r](double, const Segment& x, const Vec& v) {
    const double xx = x.current()[0];
    return 0.5 * (qx * xx * xx + r * v[0] * v[0]);
  };
  ctx.l_v = [r](double, const Vec& v) { return Vec(r * v); };
  ctx.h = [hT](const Vec& x) { return 0.5 * hT * x[0] * x[0]; };
  ctx.h_x = [hT](const Vec& x) { return Vec(hT * x); };
  return ctx;
}

// Installs the state-gradient kernel of the quadratic running cost along the
// realized trajectories of a (pre-simulated, seed-identical) ensemble.
void attach_dl_dx(HamiltonianContext& ctx, std::shared_ptr<Ensemble> ens,
                  double qx) {
  ctx.dl_dx.rows = 1;
  ctx.dl_dx.cols = 1;
  ctx.dl_dx.measure = DelayMeasure::dirac(0.0);
  ctx.dl_dx.K = [ens, qx](double t, double, int traj) {
    return Mat(e1(qx * ens->states(traj)(0, ens->grid().index_of(t))));
  };
}

Segment const_segment(const Mat& storage, const TimeGrid& g, double t) {
  return Segment(storage, g, g.index_of(t), PreHistory::ConstantExtend);
}

}  // namespace

TEST_CASE("Hamiltonian evaluation: hand expansion and affine structure") {
  HamiltonianContext ctx;
  ctx.coeffs = linear_coeffs(2.0, 3.0, 0.0);
  ctx.coeffs.sigma = [](double, const Segment& x, const Vec&) {
    return Mat(0.5 * x.current());
  };
  ctx.l = [](double, const Segment& x, const Vec& v) {
    return x.current()[0] * v[0];
  };

  TimeGrid g(-1.0, 1.0, 0.25);
  const double c = 1.3;
  Mat storage = Mat::Constant(1, g.size(), c);
  const Segment seg = const_segment(storage, g, 0.5);

  const double v = 0.7, p = -1.1, q = 2.4;
  const double expect = (2.0 * c + 3.0 * v) * p + 0.5 * c * q + c * v;
  CHECK(hamiltonian_eval(ctx, 0.5, seg, e1(v), e1(p), Mat(e1(q))) ==
        doctest::Approx(expect).epsilon(1e-14));

  // H is affine in (p, q): the second difference in p vanishes.
  const double h1 = hamiltonian_eval(ctx, 0.5, seg, e1(v), e1(p), Mat(e1(q)));
  const double h2 =
      hamiltonian_eval(ctx, 0.5, seg, e1(v), e1(2.0 * p), Mat(e1(q)));
  const double h3 =
      hamiltonian_eval(ctx, 0.5, seg, e1(v), e1(3.0 * p), Mat(e1(q)));
  CHECK(std::abs(h3 - 2.0 * h2 + h1) <= 1e-12);
}

TEST_CASE("variational solution vanishes for a zero direction") {
  TimeGrid g(0.0, 1.0, 1.0 / 32);
  HamiltonianContext ctx = quadratic_ctx(linear_coeffs(0.8, 1.0, 0.3), 1, 1, 1);
  ControlProcess vhat(g, 1, [](double) { return Vec(Vec::Zero(1)); });
  SimParams params;
  params.n_paths = 16;
  params.seed = 71;
  Ensemble xhat = solve_variational(ctx, vhat, g, params);
  for (int i = 0; i < params.n_paths; ++i)
    CHECK(xhat.states(i).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("variational solution is the exact difference path for linear dynamics") {
  // b linear with a genuine lag, sigma constant: X(u + eps vhat) - X(u) equals
  // eps * Xhat exactly on the shared grid and noise.
  const double dt = 1.0 / 64, eps = 0.25;
  TimeGrid g(-0.25, 1.0, dt);
  HamiltonianContext ctx =
      quadratic_ctx(linear_coeffs(0.5, 1.2, 0.4, -0.7, 0.25), 1, 1, 1);
  InitialData init{[](double s) { return Vec(e1(1.0 + s)); },
                   [](double) { return Vec(Vec::Zero(1)); }};
  ControlProcess u(g, 1, [](double t) { return Vec(e1(std::sin(t))); });
  ControlProcess vhat(g, 1, [](double t) { return Vec(e1(std::cos(t))); });
  SimParams params;
  params.n_paths = 24;
  params.seed = 72;

  Ensemble base = simulate_forward(ctx.coeffs, init, u, ctx.phi,
                                   ctx.control_measure, g, params);
  Ensemble bumped =
      simulate_forward(ctx.coeffs, init, u.scaled_plus(1.0, vhat, eps), ctx.phi,
                       ctx.control_measure, g, params);
  Ensemble xhat = solve_variational(ctx, vhat, g, params);
  double worst = 0.0;
  for (int i = 0; i < params.n_paths; ++i)
    worst = std::max(worst, (bumped.states(i) - base.states(i) -
                             eps * xhat.states(i))
                                .cwiseAbs()
                                .maxCoeff());
  CHECK(worst <= 1e-10);
}

TEST_CASE("adjoint vanishes for zero terminal and running gradients") {
  TimeGrid g(0.0, 1.0, 1.0 / 32);
  HamiltonianContext ctx = quadratic_ctx(linear_coeffs(0.8, 1.0, 0.3), 0, 1, 0);
  ctx.h_x = [](const Vec& x) { return Vec(Vec::Zero(x.size())); };
  SimParams params;
  params.n_paths = 64;
  params.seed = 73;
  InitialData init{[](double) { return Vec(e1(1.0)); },
                   [](double) { return Vec(Vec::Zero(1)); }};
  ControlProcess u(g, 1, [](double) { return Vec(Vec::Zero(1)); });
  Ensemble xu = simulate_forward(ctx.coeffs, init, u, ctx.phi,
                                 ctx.control_measure, g, params);
  IabseeConfig cfg;
  AdjointPair adj = solve_adjoint(ctx, xu, cfg);
  for (int i = 0; i < params.n_paths; ++i) {
    CHECK(adj.backward().Y[i].cwiseAbs().maxCoeff() == 0.0);
    CHECK(adj.backward().Z[i].cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("adjoint matches the linear ODE oracle") {
  // b = a x(t), sigma constant, h(x) = x: p(t) = e^{a (T - t)} deterministically.
  const double dt = 1.0 / 128, a = 0.8;
  TimeGrid g(0.0, 1.0, dt);
  HamiltonianContext ctx = quadratic_ctx(linear_coeffs(a, 1.0, 0.5), 0, 1, 0);
  ctx.h = [](const Vec& x) { return x[0]; };
  ctx.h_x = [](const Vec& x) { return Vec(Vec::Ones(x.size())); };
  SimParams params;
  params.n_paths = 32;
  params.seed = 74;
  InitialData init{[](double) { return Vec(e1(1.0)); },
                   [](double) { return Vec(Vec::Zero(1)); }};
  ControlProcess u(g, 1, [](double) { return Vec(Vec::Zero(1)); });
  Ensemble xu = simulate_forward(ctx.coeffs, init, u, ctx.phi,
                                 ctx.control_measure, g, params);
  IabseeConfig cfg;
  cfg.features = {0, false, {}, false};
  cfg.ridge = 0.0;
  cfg.n_picard = 40;
  cfg.tol = 1e-20;
  AdjointPair adj = solve_adjoint(ctx, xu, cfg);
  const BackwardSolution& sol = adj.backward();
  CHECK(sol.converged);
  double worst = 0.0;
  for (int k = 0; k <= sol.horizon_col; ++k)
    worst = std::max(worst, std::abs(sol.Y[0](0, k) -
                                     std::exp(a * (1.0 - sol.time_of(k)))));
  CHECK(worst <= 5.0 * dt);
  // Scaling the terminal gradient scales the whole (linear) adjoint.
  ctx.h_x = [](const Vec& x) { return Vec(2.5 * Vec::Ones(x.size())); };
  AdjointPair adj2 = solve_adjoint(ctx, xu, cfg);
  double lin = 0.0;
  for (int k = 0; k <= sol.horizon_col; ++k)
    lin = std::max(lin, std::abs(adj2.backward().Y[0](0, k) -
                                 2.5 * sol.Y[0](0, k)));
  CHECK(lin <= 1e-9);
}

TEST_CASE("generic cost evaluation reduces to exact left-point sums") {
  const double dt = 1.0 / 64, c = 1.7;
  TimeGrid g(0.0, 1.0, dt);
  HamiltonianContext ctx = quadratic_ctx(linear_coeffs(0.0, 0.0, 0.0), 0, 0, 0);
  ctx.h = [](const Vec& x) { return 3.0 * x[0]; };
  SimParams params;
  params.n_paths = 8;
  params.seed = 75;
  InitialData init{[c](double) { return Vec(e1(c)); },
                   [](double) { return Vec(Vec::Zero(1)); }};
  ControlProcess u(g, 1, [](double) { return Vec(Vec::Zero(1)); });
  Ensemble ens = simulate_forward(ctx.coeffs, init, u, ctx.phi,
                                  ctx.control_measure, g, params);

  ctx.l = [](double, const Segment&, const Vec&) { return 1.0; };
  CostReport r1 = cost_evaluate_generic(ctx, ens, u);
  CHECK(r1.J == doctest::Approx(1.0 + 3.0 * c).epsilon(1e-13));
  CHECK(r1.se <= 1e-14);

  ctx.l = [](double t, const Segment&, const Vec&) { return t; };
  CostReport r2 = cost_evaluate_generic(ctx, ens, u);
  CHECK(r2.J == doctest::Approx(0.5 - 0.5 * dt + 3.0 * c).epsilon(1e-12));
}

TEST_CASE("Gateaux derivative: central differences match the expansion exactly "
          "for a linear-quadratic functional") {
  const double dt = 1.0 / 64;
  TimeGrid g(0.0, 1.0, dt);
  SimParams params;
  params.n_paths = 200;
  params.seed = 76;
  HamiltonianContext ctx =
      quadratic_ctx(linear_coeffs(0.5, 1.0, 0.4), 1.0, 1.0, 1.0);
  InitialData init{[](double) { return Vec(e1(1.0)); },
                   [](double) { return Vec(Vec::Zero(1)); }};
  ControlProcess u(g, 1, [](double t) { return Vec(e1(0.5 * t)); });
  ControlProcess vhat(g, 1, [](double t) { return Vec(e1(std::cos(t))); });
  auto ens = std::make_shared<Ensemble>(simulate_forward(
      ctx.coeffs, init, u, ctx.phi, ctx.control_measure, g, params));
  attach_dl_dx(ctx, ens, 1.0);

  GateauxReport rep = gateaux_derivative(ctx, init, u, vhat, g, params,
                                         {1e-1, 1e-2});
  // J(eps) is exactly quadratic in eps, so every ladder entry is the exact
  // discrete derivative and the analytic expansion agrees to roundoff.
  CHECK(std::abs(rep.fd_ladder[0] - rep.fd_ladder[1]) <=
        1e-7 * std::max(1.0, std::abs(rep.fd)));
  CHECK(std::abs(rep.fd - rep.analytic) <=
        1e-6 * std::max(1.0, std::abs(rep.fd)));
}

TEST_CASE("necessary-condition residual table: exact values for constant "
          "control gradients") {
  TimeGrid g(0.0, 1.0, 1.0 / 32);
  SimParams params;
  params.n_paths = 128;
  params.seed = 77;
  HamiltonianContext ctx = quadratic_ctx(linear_coeffs(0.3, 0.0, 0.5), 0, 1, 0);
  ctx.coeffs.b_v = [](double) { return Mat(Mat::Zero(1, 1)); };
  ctx.coeffs.sigma_v = [](double, int) { return Mat(Mat::Zero(1, 1)); };
  InitialData init{[](double) { return Vec(e1(1.0)); },
                   [](double) { return Vec(Vec::Zero(1)); }};
  const double ubar = 0.3;
  ControlProcess u(g, 1, [ubar](double) { return Vec(e1(ubar)); });
  Ensemble xu = simulate_forward(ctx.coeffs, init, u, ctx.phi,
                                 ctx.control_measure, g, params);
  IabseeConfig cfg;
  cfg.features = {0, false, {}, false};
  cfg.ridge = 0.0;
  AdjointPair adj = solve_adjoint(ctx, xu, cfg);

  SUBCASE("constant gradient one") {
    ctx.l_v = [](double, const Vec&) { return Vec(Vec::Ones(1)); };
    ResidualTable t = necessary_residual(ctx, u, xu, adj,
                                         {e1(ubar), e1(ubar + 0.7)}, {8, 24},
                                         cfg);
    for (int a = 0; a < 2; ++a) {
      CHECK(std::abs(t.value(a, 0)) <= 1e-12);          // probe == u
      CHECK(t.value(a, 1) == doctest::Approx(0.7).epsilon(1e-10));
    }
    CHECK(std::abs(t.min_value) <= 1e-12);
  }

  SUBCASE("non-optimal control is detected") {
    // H_v = r u = 0.3 > 0, so the probe v = 0 gives a negative directional
    // value far beyond its (zero) standard error.
    ctx.l_v = [](double, const Vec& v) { return Vec(v); };
    ResidualTable t =
        necessary_residual(ctx, u, xu, adj, {e1(0.0)}, {16}, cfg);
    CHECK(t.value(0, 0) == doctest::Approx(-ubar * ubar).epsilon(1e-9));
    CHECK(t.min_value < -10.0 * std::max(t.min_se, 1e-12));
  }
}

TEST_CASE("convexity probe accepts convex data and flags concave terminal cost") {
  HamiltonianContext ctx =
      quadratic_ctx(linear_coeffs(0.5, 1.0, 0.4), 1.0, 1.0, 1.0);
  ConvexityReport ok = sufficient_conditions_probe(ctx, 64, 91);
  CHECK(ok.violations == 0);
  CHECK(ok.min_gap_H >= -1e-8);
  CHECK(ok.min_gap_h >= -1e-8);

  ctx.h = [](const Vec& x) { return -0.5 * x[0] * x[0]; };
  ctx.h_x = [](const Vec& x) { return Vec(-x); };
  ConvexityReport bad = sufficient_conditions_probe(ctx, 64, 91);
  CHECK(bad.violations > 0);
  CHECK(bad.min_gap_h < 0.0);
}

TEST_CASE("duality bookkeeping: deterministic case closes to O(dt)") {
  const double dt = 1.0 / 128;
  TimeGrid g(-0.25, 1.0, dt);
  HamiltonianContext ctx =
      quadratic_ctx(linear_coeffs(0.4, 1.0, 0.0, -0.3, 0.25), 1.0, 1.0, 1.0);
  ctx.coeffs.sigma = [](double, const Segment&, const Vec&) {
    return Mat(Mat::Zero(1, 1));
  };
  SimParams params;
  params.n_paths = 16;
  params.seed = 78;
  InitialData init{[](double s) { return Vec(e1(1.0 + 0.5 * s)); },
                   [](double) { return Vec(Vec::Zero(1)); }};
  ControlProcess u(g, 1, [](double t) { return Vec(e1(std::sin(t))); });
  ControlProcess vhat(g, 1, [](double t) { return Vec(e1(std::cos(t))); });
  auto ens = std::make_shared<Ensemble>(simulate_forward(
      ctx.coeffs, init, u, ctx.phi, ctx.control_measure, g, params));
  attach_dl_dx(ctx, ens, 1.0);
  IabseeConfig cfg;
  cfg.features = {0, false, {}, false};
  cfg.ridge = 0.0;
  cfg.n_picard = 40;
  cfg.tol = 1e-20;
  DualityReport rep = duality_bookkeeping(ctx, init, u, vhat, g, params, cfg);
  CHECK(std::abs(rep.gap.mean) <= 5.0 * dt);
  CHECK(std::abs(rep.lhs.mean) > 1e-3);  // the identity is not vacuous
}

TEST_CASE("duality bookkeeping: noisy case closes within Monte Carlo error") {
  const double dt = 1.0 / 128;
  TimeGrid g(-0.25, 1.0, dt);
  HamiltonianContext ctx = quadratic_ctx(
      linear_coeffs(0.4, 1.0, 0.5, -0.3, 0.25, 0.2, 0.4), 1.0, 1.0, 1.0);
  SimParams params;
  params.n_paths = 2000;
  params.seed = 79;
  InitialData init{[](double s) { return Vec(e1(1.0 + 0.5 * s)); },
                   [](double) { return Vec(Vec::Zero(1)); }};
  ControlProcess u(g, 1, [](double t) { return Vec(e1(0.2 * t)); });
  ControlProcess vhat(g, 1, [](double t) { return Vec(e1(std::cos(t))); });
  auto ens = std::make_shared<Ensemble>(simulate_forward(
      ctx.coeffs, init, u, ctx.phi, ctx.control_measure, g, params));
  attach_dl_dx(ctx, ens, 1.0);
  IabseeConfig cfg;
  cfg.features = {2, true, {}, false};
  cfg.n_picard = 20;
  cfg.tol = 1e-16;
  DualityReport rep = duality_bookkeeping(ctx, init, u, vhat, g, params, cfg);
  CHECK(std::abs(rep.gap.mean) <= 3.0 * rep.gap.se);
}
