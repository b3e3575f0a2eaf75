#include "idsee/acceptance.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>

#include <json.hpp>

#include "idsee/delay_ops.hpp"
#include "idsee/iabsee.hpp"
#include "idsee/lq.hpp"
#include "idsee/rng.hpp"
#include "idsee/smp.hpp"
#include "idsee/stats.hpp"

namespace idsee {

namespace {

Vec e1(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

// Collects checks and metrics for one criterion.
struct Checker {
  AcceptanceResult r;

  explicit Checker(int id, std::string name, double budget) {
    r.id = id;
    r.name = std::move(name);
    r.budget_seconds = budget;
    r.pass = true;
  }

  void metric(const std::string& name, double value) {
    r.metrics.push_back({name, value});
  }

  void check(bool ok, const std::string& what) {
    if (!ok) {
      r.pass = false;
      r.failures.push_back(what);
    }
  }
};

WeightedPath path_from(const TimeGrid& g,
                       const std::function<double(double)>& f) {
  Mat vals(1, g.size());
  for (int j = 0; j < g.size(); ++j) vals(0, j) = f(g.node(j));
  return WeightedPath(g, vals, 1.0);
}

Mat grid_matrix(const TimeGrid& g, const std::function<double(double)>& f) {
  Mat vals = Mat::Zero(1, g.size());
  for (int j = g.zero_index(); j < g.size(); ++j) vals(0, j) = f(g.node(j));
  return vals;
}

// Scalar LQ family used by criteria 7-8.
LQSpec scalar_lq(double a, double b, double lw, double ltw, double s0) {
  LQSpec s;
  s.d = s.m = s.d_u = 1;
  s.A = {LagKernel::scalar(1, [a](double, double) { return a; }),
         DelayMeasure::dirac(0.0)};
  s.B = [b](double) { return Mat(e1(b)); };
  s.L = [lw](double) { return Mat(e1(lw)); };
  s.Ltilde = e1(ltw);
  s.sigma0 = [s0](double) { return Mat(e1(s0)); };
  s.validate();
  return s;
}

InitialData const_init(double c) {
  return {[c](double) { return Vec(e1(c)); },
          [](double) { return Vec(Vec::Zero(1)); }};
}

// --------------------------------------------------------------------------
// Criterion 1: adjoint duality identity for the delay operator.
AcceptanceResult criterion_1(int) {
  Checker c(1, "delay operator adjoint identity", 5.0);

  TimeGrid g(-1.0, 1.0, 1.0 / 256);
  WeightedPath Z =
      path_from(g, [](double t) { return t > 0.0 ? std::sin(t) : 0.0; });
  Mat Q = grid_matrix(g, [](double t) { return std::cos(t); });
  DelayMeasure atoms({{0.25, 0.7}, {0.5, -1.2}});
  LagKernel k = LagKernel::scalar(
      1, [](double t, double th) { return std::cos(t) + 0.5 * th; });
  const double atom_res = duality_residual(k, atoms, Z, Q);
  c.metric("atom_residual", atom_res);
  c.check(atom_res <= 1e-10, "atomic duality residual above 1e-10");

  // Test functions vanish at t = 0 and T with nonzero slope, isolating the
  // O(dt^2) midpoint error of the density quadrature.
  LagKernel kd = LagKernel::scalar(
      1, [](double t, double th) { return 1.0 + 0.5 * t * t + 0.2 * th; });
  auto resid = [&](double dt) {
    TimeGrid gg(-1.0, 1.0, dt);
    WeightedPath Zg = path_from(
        gg, [](double t) { return t > 0.0 ? std::sin(M_PI * t) : 0.0; });
    Mat Qg = grid_matrix(
        gg, [](double t) { return std::sin(M_PI * t) * (1.0 + 0.3 * t); });
    DelayMeasure mixed({{0.25, 0.6}}, {0.0, 0.5}, {1.1});
    return duality_residual(kd, mixed, Zg, Qg);
  };
  const double r1 = resid(1.0 / 64), r2 = resid(1.0 / 128);
  const double order = std::log2(r1 / r2);
  c.metric("density_richardson_order", order);
  c.check(r1 > 1e-12, "density residual trivially zero");
  c.check(order >= 1.8, "density duality order below 1.8");
  return c.r;
}

// --------------------------------------------------------------------------
// Criterion 2: operator norm bounds on random triples.
AcceptanceResult criterion_2(int) {
  Checker c(2, "operator norm bounds on 100 random triples", 10.0);
  TimeGrid g(-1.0, 1.0, 1.0 / 64);
  CounterRng rng(202);
  double worst_r = 0.0, worst_rs = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double w1 = rng.normal(trial, 0, 0), w2 = rng.normal(trial, 0, 1);
    const double a = 0.3 + 0.2 * std::abs(rng.normal(trial, 0, 2));
    DelayMeasure m({{0.25, w1}, {0.5, w2}}, {0.0, 0.375}, {a});
    const double c1 = rng.normal(trial, 1, 0), c2 = rng.normal(trial, 1, 1);
    LagKernel k = LagKernel::scalar(1, [c1, c2](double t, double th) {
      return c1 * std::cos(2.0 * t) + c2 * std::sin(1.0 + th);
    });
    Mat zv(1, g.size());
    for (int j = 0; j < g.size(); ++j)
      zv(0, j) = rng.normal(trial, 2, j % 7) * std::cos(g.node(j) * (trial + 1));
    WeightedPath Z(g, zv, 1.0);

    OperatorBounds b = operator_bounds(k, m, g);
    const double bound_r = b.M0 * b.M * l2_sq_full(Z.values(), g);
    if (bound_r > 0.0)
      worst_r = std::max(worst_r,
                         l2_sq_on_horizon(apply_R(k, m, Z), g) / bound_r);
    Mat Q = grid_matrix(g,
                        [trial](double t) { return std::sin(t * (1 + trial)); });
    const double bound_rs = b.M0 * b.M * l2_sq_on_horizon(Q, g);
    if (bound_rs > 0.0)
      worst_rs = std::max(
          worst_rs, l2_sq_full(apply_R_star(k, m, Q, g), g) / bound_rs);
  }
  c.metric("worst_R_ratio", worst_r);
  c.metric("worst_Rstar_ratio", worst_rs);
  c.check(worst_r <= 1.0 + 1e-8, "R norm bound violated");
  c.check(worst_rs <= 1.0 + 1e-8, "R* norm bound violated");
  return c.r;
}

// --------------------------------------------------------------------------
// Criterion 3: lag change-of-variables identity.
AcceptanceResult criterion_3(int) {
  Checker c(3, "change-of-variables identity", 5.0);
  TimeGrid g(-1.0, 1.0, 1.0 / 256);
  const double atom_res = cv_identity_check(
      [](double t, double th) { return (1.0 + 0.2 * t) * (1.0 + th); },
      DelayMeasure({{0.25, 2.0}, {0.5, -0.7}}), g);
  c.metric("atom_residual", atom_res);
  c.check(atom_res == 0.0, "atomic change-of-variables residual not exact");

  auto gfun = [](double t, double th) {
    return t * (1.0 - t) * (1.0 + 0.5 * th);
  };
  DelayMeasure dens({}, {0.0, 0.5}, {1.3});
  auto resid = [&](double dt) {
    TimeGrid gg(-1.0, 1.0, dt);
    return cv_identity_check(gfun, dens, gg);
  };
  const double r1 = resid(1.0 / 64), r2 = resid(1.0 / 128);
  const double order = std::log2(r1 / r2);
  c.metric("density_richardson_order", order);
  c.check(r1 > 1e-12, "density residual trivially zero");
  c.check(order >= 1.8, "density change-of-variables order below 1.8");
  return c.r;
}

// --------------------------------------------------------------------------
// Criterion 4: adapted adjoint duality within Monte Carlo error.
AcceptanceResult criterion_4(int workers) {
  Checker c(4, "adapted adjoint duality", 30.0);
  (void)workers;
  TimeGrid g(-1.0, 1.0, 1.0 / 256);
  const int n = 10000;
  Ensemble ens(g, n, 1, 1, 404, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < g.steps_from_zero(); ++j)
      ens.states(i)(0, g.zero_index() + j + 1) =
          1.0 + 0.5 * ens.brownian(i)(0, j + 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= g.zero_index(); ++j) ens.states(i)(0, j) = 1.0;

  DelayMeasure atoms({{0.25, 0.8}, {0.5, -0.4}});
  LagKernel k = LagKernel::scalar(
      1, [](double t, double th) { return 1.0 + 0.3 * t + 0.1 * th; });

  // Z adapted and inside the regression span; Q the Brownian martingale.
  std::vector<Mat> Z(n), Q(n);
  for (int i = 0; i < n; ++i) {
    Mat z = Mat::Zero(1, g.size()), q = Mat::Zero(1, g.size());
    for (int j = g.zero_index() + 1; j < g.size(); ++j) {
      const double t = g.node(j);
      z(0, j) = t * (1.0 + 0.1 * ens.brownian(i)(0, j - g.zero_index()));
      q(0, j) = ens.brownian(i)(0, j - g.zero_index());
    }
    Z[i] = z;
    Q[i] = q;
  }

  // Default ridge: at t = 0 the state is constant across paths, so the
  // degree-2 Gram is singular without regularization. The shrinkage bias is
  // orders of magnitude below the Monte Carlo standard error tested here.
  FeatureMap fm{2, true, {}, false};
  ConditionalExpectation ce(ens, fm);
  std::vector<Mat> aq = adapted_adjoint(k, atoms, Q, ens, ce);

  std::vector<double> d(n);
  for (int i = 0; i < n; ++i) {
    WeightedPath zp(g, Z[i], 1.0);
    const Mat rz = apply_R(k, atoms, zp);
    double lhs = 0.0, rhs = 0.0;
    for (int j = g.zero_index(); j < g.size(); ++j) {
      lhs += rz(0, j) * Q[i](0, j);
      rhs += Z[i](0, j) * aq[i](0, j);
    }
    d[i] = (lhs - rhs) * g.dt();
  }
  const MeanSE ms = batch_mean_se(d);
  c.metric("gap_mean", ms.mean);
  c.metric("gap_se", ms.se);
  c.check(std::abs(ms.mean) <= 3.0 * ms.se,
          "adapted duality gap beyond 3 standard errors");
  return c.r;
}

// --------------------------------------------------------------------------
// Criterion 5: forward solver oracles.
AcceptanceResult criterion_5(int workers) {
  Checker c(5, "forward solver oracles", 60.0);
  const ScalarControlKernel one = ScalarControlKernel::one();
  const DelayMeasure d0 = DelayMeasure::dirac(0.0);

  // (a) zero coefficients: constant trajectory, bit-exact.
  {
    TimeGrid g(-0.5, 1.0, 1.0 / 256);
    Coefficients z;
    z.b = [](double, const Segment&, const Vec&) { return e1(0.0); };
    z.sigma = [](double, const Segment&, const Vec&) { return Mat::Zero(1, 1); };
    z.b_v = [](double) { return Mat::Zero(1, 1); };
    z.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
    ControlProcess v(g, 1, [](double) { return e1(0.0); });
    SimParams p;
    p.n_paths = 8;
    p.workers = workers;
    Ensemble ens = simulate_forward(z, const_init(1.5), v, one, d0, g, p);
    double worst = 0.0;
    for (int i = 0; i < 8; ++i)
      worst = std::max(worst,
                       (ens.states(i).array() - 1.5).abs().maxCoeff());
    c.metric("zero_coeff_error", worst);
    c.check(worst == 0.0, "zero-coefficient invariance not exact");
  }

  // (b) linear ODE: first-order error ratio under dt-halving.
  {
    const double a = 1.3, x0 = 0.8;
    auto run = [&](double dt) {
      TimeGrid g(0.0, 1.0, dt);
      Coefficients cf;
      cf.b = [a](double, const Segment& x, const Vec&) {
        return Vec(a * x.current());
      };
      cf.sigma = [](double, const Segment&, const Vec&) {
        return Mat::Zero(1, 1);
      };
      cf.b_v = [](double) { return Mat::Zero(1, 1); };
      cf.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
      ControlProcess v(g, 1, [](double) { return e1(0.0); });
      SimParams p;
      p.workers = workers;
      Ensemble ens = simulate_forward(cf, const_init(x0), v, one, d0, g, p);
      return std::abs(ens.states(0)(0, g.num_steps()) - x0 * std::exp(a));
    };
    const double ratio = run(1.0 / 128) / run(1.0 / 256);
    c.metric("ode_halving_ratio", ratio);
    c.check(ratio >= 1.8 && ratio <= 2.2, "ODE error ratio outside [1.8, 2.2]");
  }

  // (c) delayed method-of-steps oracle.
  {
    const double dt = 1.0 / 256;
    TimeGrid g(-1.0, 2.0, dt);
    Coefficients cf;
    cf.b = [](double, const Segment& x, const Vec&) {
      return Vec(x.at_lag(1.0));
    };
    cf.sigma = [](double, const Segment&, const Vec&) { return Mat::Zero(1, 1); };
    cf.b_v = [](double) { return Mat::Zero(1, 1); };
    cf.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
    ControlProcess v(g, 1, [](double) { return e1(0.0); });
    SimParams p;
    p.workers = workers;
    Ensemble ens = simulate_forward(cf, const_init(1.0), v, one, d0, g, p);
    double worst = 0.0;
    for (int j = g.zero_index(); j < g.size(); ++j) {
      const double t = g.node(j);
      const double exact =
          t <= 1.0 ? 1.0 + t : 1.0 + t + 0.5 * (t - 1.0) * (t - 1.0);
      worst = std::max(worst, std::abs(ens.states(0)(0, j) - exact));
    }
    c.metric("method_of_steps_error", worst);
    c.check(worst <= 5.0 * dt, "delayed oracle error above 5 dt");
  }

  // (d) Picard gap decay on the linear family.
  {
    TimeGrid g(-0.25, 1.0, 1.0 / 256);
    Coefficients cf;
    cf.b = [](double, const Segment& x, const Vec&) {
      return Vec(1.5 * x.current());
    };
    cf.sigma = [](double, const Segment&, const Vec&) {
      return Mat::Zero(1, 1);
    };
    cf.b_v = [](double) { return Mat::Zero(1, 1); };
    cf.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
    ControlProcess v(g, 1, [](double) { return e1(0.0); });
    SimParams p;
    p.workers = workers;
    auto [ens, rep] = picard_solve_forward(cf, const_init(1.0), v, one, d0, g,
                                           p, 30, 1e-24);
    double worst_ratio = 0.0;
    for (std::size_t nidx = 2;
         nidx + 1 < std::min<std::size_t>(rep.gaps.size(), 8); ++nidx)
      if (rep.gaps[nidx] > 1e-20)
        worst_ratio =
            std::max(worst_ratio, rep.gaps[nidx + 1] / rep.gaps[nidx]);
    c.metric("picard_worst_ratio", worst_ratio);
    c.check(rep.converged, "forward Picard did not converge");
    c.check(worst_ratio <= 0.5, "Picard gap ratio above 0.5 from iteration 3");
  }
  return c.r;
}

// --------------------------------------------------------------------------
// Criterion 6: anticipated backward solver oracles.
AcceptanceResult criterion_6(int workers) {
  Checker c(6, "anticipated backward solver oracles", 90.0);
  const double dt = 1.0 / 256;

  // (a) martingale case: constant terminal, zero generator, exact Y.
  {
    TimeGrid g(0.0, 1.0, dt);
    const int n = 10000;
    Ensemble ens(g, n, 1, 1, 606, 1.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < g.num_steps(); ++j)
        ens.states(i)(0, j + 1) = ens.states(i)(0, j) + ens.increments(i)(0, j);
    AnticipatedGenerator zero =
        [](double, int, const FutureSegment&, const FutureSegment&) {
          return e1(0.0);
        };
    TerminalData td;
    td.xi = [](const Ensemble&, int, double) { return e1(3.0); };
    td.eta = [](const Ensemble&, int, double) { return Mat(Mat::Zero(1, 1)); };
    // Intercept-only regression with zero ridge reproduces the constant
    // exactly; richer bases are singular at t = 0 where W == 0 on all paths.
    IabseeConfig cfg;
    cfg.features = {0, false, {}, false};
    cfg.ridge = 0.0;
    cfg.workers = workers;
    BackwardSolution sol = solve_iabsee(zero, td, ens, cfg);
    double worst_y = 0.0, z_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k <= sol.horizon_col; ++k)
        worst_y = std::max(worst_y, std::abs(sol.Y[i](0, k) - 3.0));
      z_sq += sol.Z[i].leftCols(sol.horizon_col).squaredNorm() /
              (static_cast<double>(n) * sol.horizon_col);
    }
    c.metric("martingale_worst_y", worst_y);
    c.metric("martingale_z_rms", std::sqrt(z_sq));
    c.check(worst_y <= 1e-8, "martingale Y not exact to regression floor");
    c.check(std::sqrt(z_sq) <= 5.0, "martingale Z beyond regression noise");
    c.check(sol.converged, "martingale Picard not converged");
  }

  // (b) anticipated deterministic method-of-steps oracle.
  {
    const double delta = 0.5;
    TimeGrid g(0.0, 1.0, dt);
    Ensemble ens(g, 32, 1, 1, 607, 1.0);
    AnticipatedGenerator gen =
        [delta](double, int, const FutureSegment& y, const FutureSegment&) {
          return Vec(y.at_lag(delta));
        };
    TerminalData td;
    td.theta_max = delta;
    td.xi = [](const Ensemble&, int, double) { return e1(1.0); };
    td.eta = [](const Ensemble&, int, double) { return Mat(Mat::Zero(1, 1)); };
    IabseeConfig cfg;
    cfg.features = {0, false, {}, false};
    cfg.n_picard = 30;
    cfg.tol = 1e-22;
    cfg.workers = workers;
    BackwardSolution sol = solve_iabsee(gen, td, ens, cfg);
    double worst = 0.0;
    for (int k = 0; k <= sol.horizon_col; ++k) {
      const double t = sol.time_of(k);
      const double exact =
          t >= 0.5 ? 2.0 - t : 2.125 - 1.5 * t + 0.5 * t * t;
      worst = std::max(worst, std::abs(sol.Y[0](0, k) - exact));
    }
    c.metric("anticipated_oracle_error", worst);
    c.check(worst <= 5.0 * dt, "anticipated oracle error above 5 dt");
  }

  // (c, d) Picard contraction and exact terminal pinning.
  {
    TimeGrid g(0.0, 1.0, dt);
    const int n = 10000;
    Ensemble ens(g, n, 1, 1, 608, 1.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < g.num_steps(); ++j)
        ens.states(i)(0, j + 1) = ens.states(i)(0, j) + ens.increments(i)(0, j);
    TerminalData td;
    td.theta_max = 0.25;
    td.xi = [](const Ensemble& e, int i, double) {
      return Vec(e.states(i).col(e.grid().num_steps()));
    };
    td.eta = [](const Ensemble&, int, double t) {
      return Mat(std::sin(t) * Mat::Ones(1, 1));
    };
    AnticipatedGenerator gen = [](double, int, const FutureSegment& y,
                                  const FutureSegment& z) {
      return Vec(0.5 * y.at_lag(0.25) + 0.3 * z.at_lag(0.125) +
                 0.2 * y.current());
    };
    IabseeConfig cfg;
    cfg.features = {2, true, {}, false};
    cfg.n_picard = 10;
    cfg.tol = 1e-16;
    cfg.workers = workers;
    BackwardSolution sol = solve_iabsee(gen, td, ens, cfg);
    double worst_ratio = 0.0;
    for (std::size_t k = 2; k + 1 < sol.gaps.size(); ++k)
      if (sol.gaps[k] > 1e-16)
        worst_ratio = std::max(worst_ratio, sol.gaps[k + 1] / sol.gaps[k]);
    c.metric("picard_worst_ratio", worst_ratio);
    c.check(worst_ratio <= 0.9, "backward Picard ratio above 0.9");
    double pin = 0.0;
    for (int i = 0; i < n; i += 100)
      for (int k = sol.horizon_col; k < sol.cols; ++k) {
        pin = std::max(pin, std::abs(sol.Y[i](0, k) -
                                     ens.states(i)(0, ens.grid().num_steps())));
        pin = std::max(pin,
                       std::abs(sol.Z[i](0, k) - std::sin(sol.time_of(k))));
      }
    c.metric("terminal_pinning_error", pin);
    c.check(pin == 0.0, "terminal pinning not exact");
  }
  return c.r;
}

// --------------------------------------------------------------------------
// Criterion 7: maximum-principle duality bookkeeping and Gateaux agreement.
AcceptanceResult criterion_7(int workers) {
  Checker c(7, "SMP duality bookkeeping and Gateaux derivative", 120.0);
  const double dt = 1.0 / 256;
  TimeGrid g(0.0, 1.0, dt);
  // Weak drift and running-cost weights with strong additive noise: the
  // O(dt) bias of the discrete integration by parts stays well inside the
  // Monte Carlo band the criterion tests against.
  LQSpec s = scalar_lq(0.15, 1.0, 0.2, 1.0, 0.8);
  SimParams params;
  params.n_paths = 10000;
  params.seed = 707;
  params.workers = workers;
  const ScalarControlKernel phi = ScalarControlKernel::one();
  const DelayMeasure measure = DelayMeasure::dirac(0.0);
  const InitialData init = const_init(1.0);
  ControlProcess u(g, 1, [](double t) { return Vec(e1(0.2 * t)); });
  ControlProcess vhat(g, 1, [](double t) { return Vec(e1(std::cos(t))); });

  HamiltonianContext plain = lq_context(s, phi, measure);
  auto ens = std::make_shared<Ensemble>(
      simulate_forward(plain.coeffs, init, u, phi, measure, g, params));
  HamiltonianContext ctx = lq_context(s, phi, measure, ens);

  IabseeConfig cfg;
  cfg.features = {2, true, {}, false};
  cfg.n_picard = 12;
  cfg.tol = 1e-14;
  cfg.workers = workers;
  DualityReport rep = duality_bookkeeping(ctx, init, u, vhat, g, params, cfg);
  c.metric("duality_gap_mean", rep.gap.mean);
  c.metric("duality_gap_se", rep.gap.se);
  c.check(std::abs(rep.gap.mean) <= 3.0 * rep.gap.se,
          "duality bookkeeping gap beyond 3 standard errors");

  GateauxReport gr =
      gateaux_derivative(ctx, init, u, vhat, g, params, {1e-1, 1e-2});
  const double tol =
      std::max(3.0 * gr.se, 1e-4 * std::max(1.0, std::abs(gr.fd)));
  c.metric("gateaux_fd", gr.fd);
  c.metric("gateaux_analytic", gr.analytic);
  c.check(std::abs(gr.fd - gr.analytic) <= tol,
          "finite-difference vs analytic Gateaux derivative disagree");
  return c.r;
}

// --------------------------------------------------------------------------
// Criterion 8: LQ end-to-end fixed point.
AcceptanceResult criterion_8(int workers) {
  Checker c(8, "LQ end-to-end fixed point", 180.0);
  const double dt = 1.0 / 256, gamma0 = 1.0;
  TimeGrid g(0.0, 1.0, dt);
  const ScalarControlKernel phi = ScalarControlKernel::one();
  const DelayMeasure measure = DelayMeasure::dirac(0.0);

  // Deterministic no-delay sub-case vs the Riccati oracle.
  {
    LQSpec s = scalar_lq(0.3, 0.6, 1.0, 1.0, 0.0);
    SimParams params;
    params.n_paths = 16;
    params.seed = 808;
    params.workers = workers;
    LQIterParams it;
    it.max_iter = 20;
    it.tol = 1e-6;
    IabseeConfig cfg;
    cfg.features = {0, false, {}, false};
    cfg.ridge = 0.0;
    cfg.n_picard = 20;
    cfg.tol = 1e-18;
    cfg.workers = workers;
    LQSolution sol = fbsde_fixed_point(s, const_init(gamma0), phi, measure, g,
                                       params, it, cfg);
    RiccatiReport ric = riccati_oracle(s, 1.0, dt);
    const double j_opt = ric.optimal_cost(s, e1(gamma0));
    const double gap = std::abs(sol.J_star.J - j_opt) / std::abs(j_opt);
    c.metric("riccati_relative_gap", gap);
    c.metric("riccati_iterations", sol.iterations);
    c.check(sol.converged && sol.iterations <= 20,
            "deterministic fixed point exceeded 20 iterations");
    c.check(gap <= std::max(0.02, 5.0 * dt),
            "deterministic cost disagrees with the Riccati oracle");
  }

  // Noisy case: convergence, residual table, perturbation optimality.
  {
    LQSpec s = scalar_lq(0.3, 0.4, 1.0, 1.0, 0.5);
    SimParams params;
    params.n_paths = 10000;
    params.seed = 809;
    params.workers = workers;
    LQIterParams it;
    it.max_iter = 20;
    it.tol = 1e-9;
    IabseeConfig cfg;
    cfg.features = {2, true, {}, false};
    // Tiny absolute ridge: negligible shrinkage at the interior nodes while
    // keeping the degenerate t = 0 Gram (state constant across paths)
    // solvable.
    cfg.ridge = 1e-10;
    cfg.n_picard = 6;
    cfg.tol = 1e-12;
    cfg.workers = workers;
    LQSolution sol = fbsde_fixed_point(s, const_init(gamma0), phi, measure, g,
                                       params, it, cfg);
    c.metric("lq_iterations", sol.iterations);
    c.metric("lq_J", sol.J_star.J);
    c.check(sol.converged && sol.iterations <= 20,
            "noisy fixed point exceeded 20 iterations");

    HamiltonianContext ctx = lq_context(s, phi, measure, sol.x_star);
    const int N = g.steps_from_zero();
    ResidualTable table = necessary_residual(
        ctx, sol.u_star, *sol.x_star, sol.adjoint,
        {e1(-1.0), e1(-0.5), e1(0.0), e1(0.5), e1(1.0)},
        {N / 6, 2 * N / 6, 3 * N / 6, 4 * N / 6, 5 * N / 6}, cfg);
    double worst_excess = 0.0;
    for (int a = 0; a < table.value.rows(); ++a)
      for (int b = 0; b < table.value.cols(); ++b)
        worst_excess = std::max(
            worst_excess, -(table.value(a, b) + 3.0 * table.se(a, b)));
    c.metric("residual_min", table.min_value);
    c.metric("residual_worst_excess", worst_excess);
    // u* is the exact sampled-Hamiltonian argmin given the stored adjoint, so
    // the residual is an exact identity up to floating-point noise; 1e-10 is
    // the same absolute allowance the other exact identities use.
    c.check(worst_excess <= 1e-10,
            "necessary-condition residual below -3 SE somewhere");

    int raised = 0;
    CounterRng rng(810);
    for (int k = 0; k < 8; ++k) {
      const double a1 = rng.normal(k, 0, 0), a2 = rng.normal(k, 0, 1);
      const double eps = 0.15 + 0.15 * std::abs(rng.normal(k, 0, 2));
      ControlProcess dir(g, 1, [a1, a2, k](double t) {
        return Vec(e1(a1 * std::cos((k + 1) * t) + a2 * std::sin((k + 1) * t)));
      });
      ControlProcess up = sol.u_star.scaled_plus(1.0, dir, eps);
      Ensemble ep = simulate_forward(ctx.coeffs, const_init(gamma0), up, phi,
                                     measure, g, params);
      CostReport r = cost_evaluate(s, ep, up, phi, measure);
      if (r.J >= sol.J_star.J - 3.0 * std::max(r.se, sol.J_star.se)) ++raised;
    }
    c.metric("perturbations_raising_cost", raised);
    c.check(raised == 8, "a perturbation of u* lowered the cost");
  }
  return c.r;
}

}  // namespace

std::vector<AcceptanceResult> run_acceptance(int workers) {
  using clock = std::chrono::steady_clock;
  std::vector<AcceptanceResult> out;
  const std::function<AcceptanceResult(int)> criteria[] = {
      criterion_1, criterion_2, criterion_3, criterion_4,
      criterion_5, criterion_6, criterion_7, criterion_8};
  int id = 0;
  for (const auto& fn : criteria) {
    ++id;
    const auto t0 = clock::now();
    AcceptanceResult r;
    try {
      r = fn(workers);
    } catch (const std::exception& e) {
      r.id = id;
      r.name = "criterion " + std::to_string(id);
      r.pass = false;
      r.failures.push_back(std::string("exception: ") + e.what());
    }
    r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

std::string acceptance_summary_json(const std::vector<AcceptanceResult>& rs) {
  nlohmann::ordered_json root;
  root["suite"] = "acceptance";
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rs) {
    nlohmann::ordered_json jr;
    jr["criterion"] = r.id;
    jr["name"] = r.name;
    jr["pass"] = r.pass;
    nlohmann::ordered_json jm;
    for (const auto& m : r.metrics) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", m.value);
      jm[m.name] = std::string(buf);  // fixed text form for byte-comparison
    }
    jr["metrics"] = jm;
    jr["failures"] = r.failures;
    arr.push_back(jr);
  }
  root["criteria"] = arr;
  return root.dump(2) + "\n";
}

}  // namespace idsee
