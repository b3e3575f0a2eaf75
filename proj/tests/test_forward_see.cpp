#include <doctest.h>

#include <cmath>

#include "idsee/forward_see.hpp"
#include "idsee/stats.hpp"

using namespace idsee;

namespace {

Vec e1(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

Coefficients undelayed(const std::function<double(double)>& bcoef,
                       const std::function<double(double)>& scoef) {
  Coefficients c;
  c.d = c.m = c.d_u = 1;
  c.b = [bcoef](double, const Segment& x, const Vec&) {
    return Vec(bcoef(0.0) * x.current());
  };
  c.sigma = [scoef](double, const Segment& x, const Vec&) {
    return Mat(scoef(0.0) * x.current());
  };
  c.db_dx = {LagKernel::scalar(1, [bcoef](double, double) { return bcoef(0.0); }),
             DelayMeasure::dirac(0.0)};
  c.dsigma_dx = {{LagKernel::scalar(1, [scoef](double, double) { return scoef(0.0); }),
                  DelayMeasure::dirac(0.0)}};
  c.b_v = [](double) { return Mat::Zero(1, 1); };
  c.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
  return c;
}

InitialData const_init(double x0) {
  return {[x0](double) { return e1(x0); }, [](double) { return e1(0.0); }};
}

}  // namespace

TEST_CASE("delayed control evaluation") {
  TimeGrid g(-1.0, 1.0, 1.0 / 32);
  ControlProcess v(g, 1, [](double t) { return e1(std::sin(2.0 * t)); });
  ScalarControlKernel one = ScalarControlKernel::one();

  // Dirac at 0: undelayed.
  CHECK(delayed_control(v.traj(0), g, one, DelayMeasure::dirac(0.0), 0.5)[0] ==
        doctest::Approx(std::sin(1.0)).epsilon(1e-12));
  // Dirac at delta: pure shift.
  CHECK(delayed_control(v.traj(0), g, one, DelayMeasure::dirac(0.25), 0.5)[0] ==
        doctest::Approx(std::sin(0.5)).epsilon(1e-12));
  // Constant control, total mass factors out.
  ControlProcess vc(g, 1, [](double) { return e1(2.0); });
  DelayMeasure m({{0.25, 0.5}}, {0.0, 0.5}, {0.6});  // mass 0.8
  CHECK(delayed_control(vc.traj(0), g, one, m, 0.7)[0] ==
        doctest::Approx(1.6).epsilon(1e-12));
}

TEST_CASE("zero coefficients give a constant trajectory, bit-exact") {
  TimeGrid g(-0.5, 1.0, 1.0 / 32);
  Coefficients c;
  c.b = [](double, const Segment&, const Vec&) { return e1(0.0); };
  c.sigma = [](double, const Segment&, const Vec&) { return Mat::Zero(1, 1); };
  c.b_v = [](double) { return Mat::Zero(1, 1); };
  c.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
  ControlProcess v(g, 1, [](double) { return e1(0.0); });
  SimParams p;
  p.n_paths = 4;
  Ensemble ens = simulate_forward(c, const_init(1.5), v,
                                  ScalarControlKernel::one(),
                                  DelayMeasure::dirac(0.0), g, p);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < g.size(); ++j) CHECK(ens.states(i)(0, j) == 1.5);
}

TEST_CASE("linear ODE: Euler error halves with dt (order 1)") {
  const double a = 1.3, x0 = 0.8;
  auto run = [&](double dt) {
    TimeGrid g(0.0, 1.0, dt);
    Coefficients c = undelayed([a](double) { return a; },
                               [](double) { return 0.0; });
    ControlProcess v(g, 1, [](double) { return e1(0.0); });
    SimParams p;
    Ensemble ens = simulate_forward(c, const_init(x0), v,
                                    ScalarControlKernel::one(),
                                    DelayMeasure::dirac(0.0), g, p);
    return std::abs(ens.states(0)(0, g.num_steps()) - x0 * std::exp(a));
  };
  const double err1 = run(1.0 / 128), err2 = run(1.0 / 256);
  CHECK(err1 / err2 >= 1.8);
  CHECK(err1 / err2 <= 2.2);
}

TEST_CASE("pure-delay drift matches the method-of-steps solution") {
  // dX(t) = X(t-1) dt, history == 1, T = 2:
  // X(t) = 1 + t on [0,1]; X(t) = 1 + t + (t-1)^2/2 on [1,2].
  const double dt = 1.0 / 128;
  TimeGrid g(-1.0, 2.0, dt);
  Coefficients c;
  c.b = [](double, const Segment& x, const Vec&) { return Vec(x.at_lag(1.0)); };
  c.sigma = [](double, const Segment&, const Vec&) { return Mat::Zero(1, 1); };
  c.b_v = [](double) { return Mat::Zero(1, 1); };
  c.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
  ControlProcess v(g, 1, [](double) { return e1(0.0); });
  SimParams p;
  Ensemble ens = simulate_forward(c, const_init(1.0), v,
                                  ScalarControlKernel::one(),
                                  DelayMeasure::dirac(0.0), g, p);
  double worst = 0.0;
  for (int j = g.zero_index(); j < g.size(); ++j) {
    const double t = g.node(j);
    const double exact =
        t <= 1.0 ? 1.0 + t : 1.0 + t + 0.5 * (t - 1.0) * (t - 1.0);
    worst = std::max(worst, std::abs(ens.states(0)(0, j) - exact));
  }
  CHECK(worst <= 5.0 * dt);
}

TEST_CASE("Picard mode: factorial gap decay and solver consistency") {
  const double dt = 1.0 / 128;
  TimeGrid g(-0.25, 1.0, dt);
  Coefficients c = undelayed([](double) { return 1.5; },
                             [](double) { return 0.0; });
  ControlProcess v(g, 1, [](double) { return e1(0.0); });
  SimParams p;
  auto [ens, report] = picard_solve_forward(c, const_init(1.0), v,
                                            ScalarControlKernel::one(),
                                            DelayMeasure::dirac(0.0), g, p,
                                            25, 1e-24);
  CHECK(report.converged);
  REQUIRE(report.gaps.size() >= 4);
  for (std::size_t n = 2; n + 1 < std::min<std::size_t>(report.gaps.size(), 8);
       ++n)
    CHECK(report.gaps[n + 1] / report.gaps[n] <= 0.5);

  SimParams p2;
  Ensemble direct = simulate_forward(c, const_init(1.0), v,
                                     ScalarControlKernel::one(),
                                     DelayMeasure::dirac(0.0), g, p2);
  double gap = 0.0;
  for (int j = g.zero_index(); j < g.size(); ++j)
    gap = std::max(gap, std::abs(ens.states(0)(0, j) - direct.states(0)(0, j)));
  CHECK(gap <= 5.0 * dt);

  // Zero coefficients: one iteration, zero gap.
  Coefficients z;
  z.b = [](double, const Segment&, const Vec&) { return e1(0.0); };
  z.sigma = [](double, const Segment&, const Vec&) { return Mat::Zero(1, 1); };
  z.b_v = [](double) { return Mat::Zero(1, 1); };
  z.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
  auto [zens, zrep] = picard_solve_forward(z, const_init(2.0), v,
                                           ScalarControlKernel::one(),
                                           DelayMeasure::dirac(0.0), g, p,
                                           5, 1e-24);
  CHECK(zrep.iterations == 1);
  CHECK(zrep.gaps[0] == 0.0);
}

TEST_CASE("delayed linear drift: Picard limit matches the direct solver") {
  const double dt = 1.0 / 128;
  TimeGrid g(-0.5, 1.0, dt);
  Coefficients c;
  c.d = c.m = c.d_u = 1;
  c.b = [](double, const Segment& x, const Vec&) {
    return Vec(0.8 * x.at_lag(0.5) + 0.3 * x.current());
  };
  c.sigma = [](double, const Segment& x, const Vec&) {
    return Mat(0.2 * x.current());
  };
  c.b_v = [](double) { return Mat::Zero(1, 1); };
  c.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
  ControlProcess v(g, 1, [](double) { return e1(0.0); });
  SimParams p;
  p.n_paths = 16;
  auto [pens, rep] = picard_solve_forward(c, const_init(1.0), v,
                                          ScalarControlKernel::one(),
                                          DelayMeasure::dirac(0.0), g, p,
                                          40, 1e-26);
  Ensemble direct = simulate_forward(c, const_init(1.0), v,
                                     ScalarControlKernel::one(),
                                     DelayMeasure::dirac(0.0), g, p);
  double worst = 0.0;
  for (int i = 0; i < p.n_paths; ++i)
    for (int j = g.zero_index(); j < g.size(); ++j)
      worst = std::max(worst,
                       std::abs(pens.states(i)(0, j) - direct.states(i)(0, j)));
  CHECK(worst <= 5.0 * dt);
}

TEST_CASE("stability estimate behavior") {
  TimeGrid g(-0.5, 1.0, 1.0 / 64);
  ControlProcess v(g, 1, [](double) { return e1(0.0); });
  SimParams p;
  p.n_paths = 8;
  Coefficients c = undelayed([](double) { return 0.7; },
                             [](double) { return 0.3; });

  // Identical inputs: zero gap.
  StabilityPair same =
      stability_check(c, c, const_init(1.0), const_init(1.0), v,
                      ScalarControlKernel::one(), DelayMeasure::dirac(0.0), g, p);
  CHECK(same.lhs == 0.0);

  // b == sigma == 0, shifted start: lhs = eps^2 exactly, rhs >= eps^2.
  Coefficients z;
  z.b = [](double, const Segment&, const Vec&) { return e1(0.0); };
  z.sigma = [](double, const Segment&, const Vec&) { return Mat::Zero(1, 1); };
  z.b_v = [](double) { return Mat::Zero(1, 1); };
  z.sigma_v = [](double, int) { return Mat::Zero(1, 1); };
  const double eps = 0.01;
  StabilityPair shifted =
      stability_check(z, z, const_init(1.0), const_init(1.0 + eps), v,
                      ScalarControlKernel::one(), DelayMeasure::dirac(0.0), g, p);
  CHECK(shifted.lhs == doctest::Approx(eps * eps).epsilon(1e-10));
  CHECK(shifted.rhs >= eps * eps * (1.0 - 1e-10));

  // Constant drift perturbation: lhs scales quadratically in the size.
  auto perturbed = [&](double ceps) {
    Coefficients c2 = undelayed([](double) { return 0.7; },
                                [](double) { return 0.3; });
    c2.b = [ceps](double, const Segment& x, const Vec&) {
      return Vec(0.7 * x.current() + ceps * Vec::Ones(1));
    };
    return stability_check(c, c2, const_init(1.0), const_init(1.0), v,
                           ScalarControlKernel::one(), DelayMeasure::dirac(0.0),
                           g, p)
        .lhs;
  };
  const double l1 = perturbed(0.2), l2 = perturbed(0.1);
  CHECK(l1 / l2 == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("a priori bound with a calibrated constant") {
  TimeGrid g(-0.5, 1.0, 1.0 / 64);
  ControlProcess v(g, 1, [](double) { return e1(0.0); });
  ScalarControlKernel one = ScalarControlKernel::one();
  DelayMeasure d0 = DelayMeasure::dirac(0.0);
  SimParams p;
  p.n_paths = 256;

  auto sup_sq = [&](const Coefficients& c, const InitialData& init) {
    Ensemble ens = simulate_forward(c, init, v, one, d0, g, p);
    std::vector<double> s(p.n_paths, 0.0);
    for (int i = 0; i < p.n_paths; ++i)
      for (int j = g.zero_index(); j < g.size(); ++j)
        s[i] = std::max(s[i], ens.states(i).col(j).squaredNorm());
    return mean(s);
  };
  auto data_sq = [&](const Coefficients& c, const InitialData& init) {
    Mat hist(1, g.size());
    for (int j = 0; j < g.size(); ++j) hist.col(j) = init.gamma(g.node(j));
    WeightedPath gam(g, hist, p.lambda, p.rule);
    double s = weighted_norm(gam, 0.0) * weighted_norm(gam, 0.0);
    const Mat zvals = Mat::Zero(1, g.size());
    for (int j = g.zero_index(); j < g.num_steps(); ++j) {
      const Segment zero_seg(zvals, g, j, p.rule);
      s += c.b(g.node(j), zero_seg, e1(0.0)).squaredNorm() * g.dt();
      s += c.sigma(g.node(j), zero_seg, e1(0.0)).squaredNorm() * g.dt();
    }
    return s;
  };

  // Calibrate C on one system, then assert (with margin 2) on held-out ones.
  Coefficients cal = undelayed([](double) { return 0.5; },
                               [](double) { return 0.4; });
  cal.b = [](double, const Segment& x, const Vec&) {
    return Vec(0.5 * x.current() + 0.2 * Vec::Ones(1));
  };
  const double C =
      2.0 * sup_sq(cal, const_init(1.0)) / data_sq(cal, const_init(1.0));

  Coefficients h1 = undelayed([](double) { return 0.3; },
                              [](double) { return 0.2; });
  h1.b = [](double, const Segment& x, const Vec&) {
    return Vec(0.3 * x.at_lag(0.25) + 0.1 * Vec::Ones(1));
  };
  h1.sigma = [](double, const Segment&, const Vec&) {
    return Mat(0.2 * Mat::Ones(1, 1));
  };
  CHECK(sup_sq(h1, const_init(0.5)) <= C * data_sq(h1, const_init(0.5)));
}

TEST_CASE("strong order 1/2 against a fine reference on coupled noise") {
  // Geometric Brownian motion, manual Euler on aggregated increments of a
  // shared fine path: RMS(dt) / RMS(dt/4) ~ 2 within +-25%.
  const int n = 512, fine = 256;
  const double a = 0.6, s = 0.8, x0 = 1.0;
  TimeGrid gf(0.0, 1.0, 1.0 / fine);
  Ensemble fine_ens(gf, n, 1, 1, 7, 1.0);

  auto coarse_endpoint = [&](int i, int stride) {
    double x = x0;
    const double dt = stride * gf.dt();
    for (int j = 0; j < fine; j += stride) {
      double dw = 0.0;
      for (int k = 0; k < stride; ++k) dw += fine_ens.increments(i)(0, j + k);
      x += a * x * dt + s * x * dw;
    }
    return x;
  };
  auto rms_err = [&](int stride) {
    std::vector<double> e2(n);
    for (int i = 0; i < n; ++i) {
      const double ref = coarse_endpoint(i, 1);
      const double diff = coarse_endpoint(i, stride) - ref;
      e2[i] = diff * diff;
    }
    return std::sqrt(mean(e2));
  };
  const double r16 = rms_err(16), r4 = rms_err(4);
  CHECK(r16 / r4 >= 2.0 * 0.75);
  CHECK(r16 / r4 <= 2.0 * 1.25);
}

TEST_CASE("noise statistics and reproducibility") {
  TimeGrid g(0.0, 1.0, 1.0 / 16);
  const int n = 4000;
  Ensemble a(g, n, 1, 2, 123, 1.0), b(g, n, 1, 2, 123, 1.0);
  for (int i = 0; i < 5; ++i)
    CHECK((a.increments(i) - b.increments(i)).norm() == 0.0);

  std::vector<double> xs(n), sq(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = a.increments(i)(0, 3);
    sq[i] = xs[i] * xs[i];
  }
  MeanSE m1 = batch_mean_se(xs), m2 = batch_mean_se(sq);
  CHECK(std::abs(m1.mean) <= 5.0 * m1.se);
  CHECK(std::abs(m2.mean - g.dt()) <= 5.0 * m2.se);
}

TEST_CASE("blow-up guard") {
  TimeGrid g(0.0, 1.0, 0.5);
  Coefficients c = undelayed([](double) { return 1e14; },
                             [](double) { return 0.0; });
  ControlProcess v(g, 1, [](double) { return e1(0.0); });
  SimParams p;
  CHECK_THROWS_AS(simulate_forward(c, const_init(1.0), v,
                                   ScalarControlKernel::one(),
                                   DelayMeasure::dirac(0.0), g, p),
                  Blowup);
}

TEST_CASE("worker count does not change the result") {
  TimeGrid g(-0.25, 1.0, 1.0 / 64);
  Coefficients c = undelayed([](double) { return 0.4; },
                             [](double) { return 0.5; });
  ControlProcess v(g, 1, [](double) { return e1(0.0); });
  SimParams p1, p4;
  p1.n_paths = p4.n_paths = 64;
  p1.workers = 1;
  p4.workers = 4;
  Ensemble e1_ = simulate_forward(c, const_init(1.0), v,
                                  ScalarControlKernel::one(),
                                  DelayMeasure::dirac(0.0), g, p1);
  Ensemble e4 = simulate_forward(c, const_init(1.0), v,
                                 ScalarControlKernel::one(),
                                 DelayMeasure::dirac(0.0), g, p4);
  for (int i = 0; i < 64; ++i)
    CHECK((e1_.states(i) - e4.states(i)).norm() == 0.0);
}
