#include <doctest.h>

#include <cmath>
#include <memory>

#include "idsee/lq.hpp"
#include "idsee/stats.hpp"

using namespace idsee;

namespace {

Vec e1(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

// Scalar spec: dX = (a X + b v) dt + s0 dW, cost weights L = lw, Ltilde = ltw.
LQSpec scalar_spec(double a, double b, double lw, double ltw, double s0) {
  LQSpec s;
  s.d = s.m = s.d_u = 1;
  s.A = {LagKernel::scalar(1, [a](double, double) { return a; }),
         DelayMeasure::dirac(0.0)};
  s.B = [b](double) { return Mat(e1(b)); };
  s.L = [lw](double) { return Mat(e1(lw)); };
  s.Ltilde = e1(ltw);
  s.sigma0 = [s0](double) { return Mat(e1(s0)); };
  return s;
}

InitialData const_init(double c) {
  return {[c](double) { return Vec(e1(c)); },
          [](double) { return Vec(Vec::Zero(1)); }};
}

}  // namespace

TEST_CASE("spec validation rejects bad control weights") {
  LQSpec s = scalar_spec(0.0, 1.0, 1.0, -1.0, 0.0);
  CHECK_THROWS_AS(s.validate(), SingularWeight);

  LQSpec s2 = scalar_spec(0.0, 1.0, 1.0, 1.0, 0.0);
  s2.d_u = 2;
  s2.Ltilde = Mat(2, 2);
  s2.Ltilde << 1.0, 0.5, -0.5, 1.0;  // not symmetric
  CHECK_THROWS_AS(s2.validate(), SingularWeight);

  LQSpec s3 = scalar_spec(0.0, 1.0, 1.0, 1.0, 0.0);
  CHECK_NOTHROW(s3.validate());
  CHECK(s3.terminal_weight == Mat::Identity(1, 1));
}

TEST_CASE("cost evaluation: hand values and quadratic control scaling") {
  TimeGrid g(0.0, 1.0, 1.0 / 64);
  const ScalarControlKernel phi = ScalarControlKernel::one();
  const DelayMeasure measure = DelayMeasure::dirac(0.0);
  SimParams params;
  params.n_paths = 8;
  params.seed = 101;

  SUBCASE("zero data gives zero cost") {
    LQSpec s = scalar_spec(0.3, 1.0, 2.0, 1.0, 0.0);
    s.validate();
    ControlProcess u(g, 1, [](double) { return Vec(Vec::Zero(1)); });
    HamiltonianContext ctx = lq_context(s, phi, measure);
    Ensemble ens = simulate_forward(ctx.coeffs, const_init(0.0), u, phi,
                                    measure, g, params);
    CostReport r = cost_evaluate(s, ens, u, phi, measure);
    CHECK(r.J == 0.0);
  }

  SUBCASE("constant state x = 1, L = 2: J = 1.5") {
    LQSpec s = scalar_spec(0.0, 0.0, 2.0, 1.0, 0.0);
    s.validate();
    ControlProcess u(g, 1, [](double) { return Vec(Vec::Zero(1)); });
    HamiltonianContext ctx = lq_context(s, phi, measure);
    Ensemble ens = simulate_forward(ctx.coeffs, const_init(1.0), u, phi,
                                    measure, g, params);
    CostReport r = cost_evaluate(s, ens, u, phi, measure);
    CHECK(r.J == doctest::Approx(1.5).epsilon(1e-13));
  }

  SUBCASE("doubling the control quadruples the control term") {
    LQSpec s = scalar_spec(0.0, 0.0, 0.0, 3.0, 0.0);
    s.validate();
    ControlProcess u(g, 1, [](double t) { return Vec(e1(std::sin(t))); });
    HamiltonianContext ctx = lq_context(s, phi, measure);
    Ensemble ens = simulate_forward(ctx.coeffs, const_init(0.0), u, phi,
                                    measure, g, params);
    const double j1 = cost_evaluate(s, ens, u, phi, measure).J;
    ControlProcess u2 = u.scaled_plus(2.0, u, 0.0);
    const double j2 = cost_evaluate(s, ens, u2, phi, measure).J;
    CHECK(j2 == doctest::Approx(4.0 * j1).epsilon(1e-12));
  }
}

TEST_CASE("explicit control formula: zero map and linearity in the adjoint") {
  TimeGrid g(0.0, 1.0, 1.0 / 32);
  const ScalarControlKernel phi = ScalarControlKernel::one();
  const DelayMeasure measure = DelayMeasure::dirac(0.0);
  SimParams params;
  params.n_paths = 64;
  params.seed = 102;
  LQSpec s = scalar_spec(0.2, 1.0, 1.0, 1.0, 0.4);
  s.validate();
  ControlProcess u(g, 1, [](double) { return Vec(Vec::Zero(1)); });
  HamiltonianContext plain = lq_context(s, phi, measure);
  auto ens = std::make_shared<Ensemble>(simulate_forward(
      plain.coeffs, const_init(1.0), u, phi, measure, g, params));
  HamiltonianContext ctx = lq_context(s, phi, measure, ens);
  IabseeConfig cfg;
  AdjointPair adj = solve_adjoint(ctx, *ens, cfg);

  SUBCASE("B = D = 0 gives the zero control") {
    LQSpec s0 = s;
    s0.B = [](double) { return Mat(Mat::Zero(1, 1)); };
    ControlProcess u0 = lq_optimal_control(s0, adj, phi, measure, *ens, cfg);
    for (int i = 0; i < params.n_paths; ++i)
      CHECK(u0.traj(i).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("scaling (p, q) by 2 scales the control by 2") {
    ControlProcess u1 = lq_optimal_control(s, adj, phi, measure, *ens, cfg);
    AdjointPair scaled = adj;
    for (auto& y : scaled.sol.Y) y *= 2.0;
    for (auto& z : scaled.sol.Z) z *= 2.0;
    ControlProcess u2 = lq_optimal_control(s, scaled, phi, measure, *ens, cfg);
    double worst = 0.0;
    for (int i = 0; i < params.n_paths; ++i)
      worst = std::max(worst,
                       (u2.traj(i) - 2.0 * u1.traj(i)).cwiseAbs().maxCoeff());
    CHECK(worst <= 1e-11);
  }
}

TEST_CASE("Riccati oracle: scalar closed form and limits") {
  SUBCASE("A = 0, B = L~ = G = 1, L = 0: P(t) = 1/(1 + T - t)") {
    LQSpec s = scalar_spec(0.0, 1.0, 0.0, 1.0, 0.0);
    RiccatiReport rep = riccati_oracle(s, 1.0, 1.0 / 64);
    double worst = 0.0;
    for (std::size_t k = 0; k < rep.P.size(); ++k) {
      const double t = k * rep.dt;
      worst = std::max(worst, std::abs(rep.P[k](0, 0) - 1.0 / (2.0 - t)));
    }
    CHECK(worst <= 1e-8);
    CHECK(rep.P.front()(0, 0) == doctest::Approx(0.5).epsilon(1e-8));
  }

  SUBCASE("short horizon pins P near the terminal weight") {
    LQSpec s = scalar_spec(0.0, 1.0, 0.0, 1.0, 0.0);
    RiccatiReport rep = riccati_oracle(s, 1.0 / 64, 1.0 / 64);
    CHECK(rep.P.back()(0, 0) == 1.0);
    CHECK(std::abs(rep.P.front()(0, 0) - 1.0) <= 0.02);
  }

  SUBCASE("huge control weight freezes the Riccati flow") {
    LQSpec s = scalar_spec(0.0, 1.0, 0.0, 1e6, 0.0);
    RiccatiReport rep = riccati_oracle(s, 1.0, 1.0 / 64);
    CHECK(std::abs(rep.P.front()(0, 0) - 1.0) <= 1e-5);
  }

  SUBCASE("stiff configuration is rejected") {
    LQSpec s = scalar_spec(0.0, 1.0, 0.0, 1e-6, 0.0);
    CHECK_THROWS_AS(riccati_oracle(s, 1.0, 0.25), StiffRiccati);
  }
}

TEST_CASE("fixed point: B = D = 0 converges immediately to the zero control") {
  TimeGrid g(0.0, 1.0, 1.0 / 32);
  LQSpec s = scalar_spec(0.3, 0.0, 1.0, 1.0, 0.2);
  SimParams params;
  params.n_paths = 64;
  params.seed = 103;
  LQIterParams it;
  IabseeConfig cfg;
  LQSolution sol =
      fbsde_fixed_point(s, const_init(1.0), ScalarControlKernel::one(),
                        DelayMeasure::dirac(0.0), g, params, it, cfg);
  CHECK(sol.converged);
  CHECK(sol.iterations == 1);
  for (int i = 0; i < sol.u_star.n_paths(); ++i)
    CHECK(sol.u_star.traj(i).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("deterministic LQ fixed point matches the Riccati oracle") {
  const double dt = 1.0 / 64, gamma0 = 1.0;
  TimeGrid g(0.0, 1.0, dt);
  LQSpec s = scalar_spec(0.5, 1.0, 1.0, 1.0, 0.0);
  SimParams params;
  params.n_paths = 16;
  params.seed = 104;
  LQIterParams it;
  it.max_iter = 40;
  it.tol = 1e-12;
  IabseeConfig cfg;
  cfg.features = {0, false, {}, false};
  cfg.ridge = 0.0;
  cfg.n_picard = 30;
  cfg.tol = 1e-18;
  LQSolution sol =
      fbsde_fixed_point(s, const_init(gamma0), ScalarControlKernel::one(),
                        DelayMeasure::dirac(0.0), g, params, it, cfg);
  CHECK(sol.converged);

  RiccatiReport ric = riccati_oracle(s, 1.0, dt);
  const double j_opt = ric.optimal_cost(s, e1(gamma0));
  CHECK(std::abs(sol.J_star.J - j_opt) <=
        std::max(0.02, 5.0 * dt) * std::abs(j_opt));

  // The damped iteration contracts: control gaps shrink geometrically.
  for (std::size_t k = 1; k + 1 < sol.gaps.size(); ++k)
    if (sol.gaps[k] > 1e-20)
      CHECK(sol.gaps[k + 1] <= 0.9 * sol.gaps[k]);

  // Open-loop control agrees with the Riccati feedback along the optimal path.
  double worst = 0.0;
  const double lt_inv = 1.0 / s.Ltilde(0, 0);
  for (int k = 0; k <= g.steps_from_zero(); ++k) {
    const double x = sol.x_star->states(0)(0, k);
    const double u_fb = -lt_inv * 1.0 * ric.P[k](0, 0) * x;
    worst = std::max(worst, std::abs(sol.u_star.at(0, k)[0] - u_fb));
  }
  CHECK(worst <= 10.0 * dt);
}

TEST_CASE("noisy LQ fixed point: oracle cost, optimality, stationarity") {
  const double dt = 1.0 / 64, gamma0 = 1.0;
  TimeGrid g(0.0, 1.0, dt);
  LQSpec s = scalar_spec(0.5, 1.0, 1.0, 1.0, 0.3);
  const ScalarControlKernel phi = ScalarControlKernel::one();
  const DelayMeasure measure = DelayMeasure::dirac(0.0);
  SimParams params;
  params.n_paths = 2000;
  params.seed = 105;
  LQIterParams it;
  it.max_iter = 60;
  it.tol = 1e-10;
  IabseeConfig cfg;
  cfg.features = {2, true, {}, false};
  cfg.n_picard = 12;
  cfg.tol = 1e-14;
  LQSolution sol = fbsde_fixed_point(s, const_init(gamma0), phi, measure, g,
                                     params, it, cfg);
  CHECK(sol.converged);

  RiccatiReport ric = riccati_oracle(s, 1.0, dt);
  const double j_opt = ric.optimal_cost(s, e1(gamma0));
  CHECK(std::abs(sol.J_star.J - j_opt) <=
        std::max(0.02, 5.0 * dt) * std::abs(j_opt) + 3.0 * sol.J_star.se);

  // Cost trace non-increasing up to Monte Carlo resolution.
  for (std::size_t k = 1; k + 1 < sol.j_trace.size(); ++k)
    CHECK(sol.j_trace[k + 1] <=
          sol.j_trace[k] + 3.0 * std::max(sol.se_trace[k], 1e-12));

  // SMP cross-check: the necessary-condition residual is statistical zero.
  HamiltonianContext ctx = lq_context(s, phi, measure, sol.x_star);
  ResidualTable table = necessary_residual(
      ctx, sol.u_star, *sol.x_star, sol.adjoint,
      {e1(-0.5), e1(0.0), e1(0.5)}, {16, 32, 48}, cfg);
  CHECK(table.min_value >= -3.0 * std::max(table.min_se, 1e-6));

  // Perturbing the optimum raises the cost on common noise.
  ControlProcess vhat(g, 1, [](double t) { return Vec(e1(std::cos(3.0 * t))); });
  for (double eps : {0.1, -0.1, 0.05, -0.05}) {
    ControlProcess up = sol.u_star.scaled_plus(1.0, vhat, eps);
    Ensemble ep = simulate_forward(ctx.coeffs, const_init(gamma0), up, phi,
                                   measure, g, params);
    CostReport r = cost_evaluate(s, ep, up, phi, measure);
    CHECK(r.J >= sol.J_star.J - 3.0 * std::max(r.se, sol.J_star.se));
  }
}
