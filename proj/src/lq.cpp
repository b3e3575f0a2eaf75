#include "idsee/lq.hpp"

#include <algorithm>
#include <cmath>

#include "idsee/stats.hpp"

namespace idsee {

namespace {

Mat ltilde_inverse(const LQSpec& spec) {
  Eigen::SelfAdjointEigenSolver<Mat> es(spec.Ltilde);
  return es.eigenvectors() *
         es.eigenvalues().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

// Drift/diffusion lag sums (R X_t)(t) for one segment.
Vec apply_kernel(const DerivKernel& dk,
                 const std::vector<DelayMeasure::QuadNode>& quad, double t,
                 const Segment& x) {
  Vec acc = Vec::Zero(dk.kernel.rows);
  for (const auto& q : quad)
    acc.noalias() += q.weight * (dk.kernel.eval(t, q.theta) * x.at_lag(q.theta));
  return acc;
}

}  // namespace

void LQSpec::validate() {
  require(d > 0 && m > 0 && d_u > 0, "LQSpec: bad dimensions");
  require(Ltilde.rows() == d_u && Ltilde.cols() == d_u,
          "LQSpec: Ltilde must be d_u x d_u");
  if (!(Ltilde - Ltilde.transpose()).isZero(1e-12))
    throw SingularWeight("LQSpec: Ltilde must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(Ltilde);
  if (es.eigenvalues().minCoeff() < margin)
    throw SingularWeight("LQSpec: Ltilde eigenvalue below margin");
  // Capture dimensions by value: the defaults must survive copies of the
  // spec (and the spec object itself going out of scope).
  const int dd = d, mm = m, du = d_u;
  if (!B) B = [dd, du](double) { return Mat(Mat::Zero(dd, du)); };
  if (!D) D = [dd, du](double, int) { return Mat(Mat::Zero(dd, du)); };
  if (!L) L = [dd](double) { return Mat(Mat::Zero(dd, dd)); };
  if (!sigma0) sigma0 = [dd, mm](double) { return Mat(Mat::Zero(dd, mm)); };
  if (terminal_weight.size() == 0) terminal_weight = Mat::Identity(d, d);
  require(terminal_weight.rows() == d && terminal_weight.cols() == d,
          "LQSpec: terminal weight must be d x d");
  if (C.empty()) C.assign(m, DerivKernel{LagKernel::identity(d), DelayMeasure()});
  require(static_cast<int>(C.size()) == m,
          "LQSpec: one diffusion kernel per noise column");
  if (!A.kernel.K) A = DerivKernel{LagKernel::identity(d), DelayMeasure()};
}

HamiltonianContext lq_context(const LQSpec& spec,
                              const ScalarControlKernel& phi,
                              const DelayMeasure& control_measure,
                              std::shared_ptr<const Ensemble> states) {
  LQSpec s = spec;
  s.validate();
  HamiltonianContext ctx;
  ctx.phi = phi;
  ctx.control_measure = control_measure;
  ctx.coeffs.d = s.d;
  ctx.coeffs.m = s.m;
  ctx.coeffs.d_u = s.d_u;
  ctx.coeffs.db_dx = s.A;
  ctx.coeffs.dsigma_dx = s.C;
  ctx.coeffs.b_v = s.B;
  ctx.coeffs.sigma_v = s.D;
  ctx.coeffs.b = [s](double t, const Segment& x, const Vec& v) {
    Vec out = s.B(t) * v;
    out.noalias() +=
        apply_kernel(s.A, s.A.measure.quadrature(x.grid().dt()), t, x);
    return out;
  };
  ctx.coeffs.sigma = [s](double t, const Segment& x, const Vec& v) {
    Mat out = s.sigma0(t);
    for (int j = 0; j < s.m; ++j) {
      out.col(j) += s.D(t, j) * v;
      out.col(j).noalias() +=
          apply_kernel(s.C[j], s.C[j].measure.quadrature(x.grid().dt()), t, x);
    }
    return out;
  };
  ctx.l = [s](double t, const Segment& x, const Vec& v) {
    const Vec xx = x.current();
    return 0.5 * (xx.dot(s.L(t) * xx) + v.dot(s.Ltilde * v));
  };
  ctx.l_v = [s](double, const Vec& v) { return Vec(s.Ltilde * v); };
  ctx.h = [s](const Vec& x) { return 0.5 * x.dot(s.terminal_weight * x); };
  ctx.h_x = [s](const Vec& x) { return Vec(s.terminal_weight * x); };
  if (states) {
    ctx.dl_dx.rows = 1;
    ctx.dl_dx.cols = s.d;
    ctx.dl_dx.measure = DelayMeasure::dirac(0.0);
    ctx.dl_dx.K = [s, states](double t, double, int traj) {
      const Vec x =
          states->states(traj).col(states->grid().index_of(t));
      return Mat((s.L(t) * x).transpose());
    };
  }
  return ctx;
}

CostReport cost_evaluate(const LQSpec& spec, const Ensemble& ensemble,
                         const ControlProcess& control,
                         const ScalarControlKernel& phi,
                         const DelayMeasure& control_measure) {
  const HamiltonianContext ctx = lq_context(spec, phi, control_measure);
  return cost_evaluate_generic(ctx, ensemble, control);
}

ControlProcess lq_optimal_control(const LQSpec& spec, const AdjointPair& adjoint,
                                  const ScalarControlKernel& phi,
                                  const DelayMeasure& control_measure,
                                  const Ensemble& xu,
                                  const IabseeConfig& config) {
  LQSpec s = spec;
  s.validate();
  const Mat lt_inv = ltilde_inverse(s);
  const TimeGrid& g = xu.grid();
  const double T = g.horizon(), dt = g.dt();
  const int n = xu.n_paths(), N = g.steps_from_zero();
  const BackwardSolution& sol = adjoint.backward();
  const auto quad = control_measure.quadrature(dt);

  // Pathwise integrand B*(s) p(s) + sum_j D*(s, j) q_j(s) on [0, T].
  std::vector<Mat> hv(n);
  for (int i = 0; i < n; ++i) {
    Mat h = Mat::Zero(s.d_u, N + 1);
    for (int k = 0; k <= N; ++k) {
      const double t = k * dt;
      Vec acc = s.B(t).transpose() * sol.Y[i].col(k);
      const Mat q = sol.z_at(i, k);
      for (int j = 0; j < s.m; ++j)
        acc.noalias() += s.D(t, j).transpose() * q.col(j);
      h.col(k) = acc;
    }
    hv[i] = h;
  }

  ConditionalExpectation ce(xu, config.features, config.ridge);
  std::vector<Mat> out(n, Mat::Zero(s.d_u, g.size()));
  Mat targets(s.d_u, n);
  for (int k = 0; k <= N; ++k) {
    const double t = k * dt;
    for (int i = 0; i < n; ++i) {
      Vec acc = Vec::Zero(s.d_u);
      const FutureSegment fut(hv[i], dt, k);
      for (const auto& q : quad) {
        const double tq = t + q.theta;
        if (tq > T + 1e-12) continue;  // p, q zero-extended past T
        acc.noalias() += (q.weight * phi.eval(t, tq)) * fut.at_lag(q.theta);
      }
      targets.col(i) = acc;
    }
    const Mat proj = ce.project(g.zero_index() + k, targets);
    for (int i = 0; i < n; ++i)
      out[i].col(g.zero_index() + k) = -(lt_inv * proj.col(i));
  }
  return ControlProcess(g, s.d_u, std::move(out));
}

LQSolution fbsde_fixed_point(const LQSpec& spec, const InitialData& init,
                             const ScalarControlKernel& phi,
                             const DelayMeasure& control_measure,
                             const TimeGrid& grid, const SimParams& params,
                             const LQIterParams& iter,
                             const IabseeConfig& config) {
  LQSpec s = spec;
  s.validate();
  require(iter.rho > 0.0 && iter.rho <= 1.0, "fbsde_fixed_point: rho in (0,1]");
  const HamiltonianContext base_ctx = lq_context(s, phi, control_measure);

  ControlProcess u(grid, s.d_u, [&](double t) {
    return t <= 1e-12 ? Vec(init.varphi(t)) : Vec(Vec::Zero(s.d_u));
  });

  LQSolution out{u, nullptr, AdjointPair{}, {}, {}, {}, {}, 0, false};
  for (int k = 0; k < iter.max_iter; ++k) {
    auto ens = std::make_shared<Ensemble>(simulate_forward(
        base_ctx.coeffs, init, u, phi, control_measure, grid, params));
    const CostReport cr = cost_evaluate_generic(base_ctx, *ens, u);
    out.j_trace.push_back(cr.J);
    out.se_trace.push_back(cr.se);

    const HamiltonianContext ctx = lq_context(s, phi, control_measure, ens);
    AdjointPair adj = solve_adjoint(ctx, *ens, config);
    ControlProcess u_new =
        lq_optimal_control(s, adj, phi, control_measure, *ens, config);
    // The update acts on [0, T] only; the deterministic control history
    // stays pinned to varphi.
    for (int i = 0; i < u_new.n_paths(); ++i)
      for (int j = 0; j < grid.zero_index(); ++j)
        u_new.traj_mut(i).col(j) = init.varphi(grid.node(j));
    ControlProcess u_next = u.scaled_plus(1.0 - iter.rho, u_new, iter.rho);

    // M^2 gap E int_0^T |u_next - u|^2 dt on the grid.
    const int n = params.n_paths;
    double gap = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = grid.zero_index(); j < grid.num_steps(); ++j)
        gap += (u_next.at(i, j) - u.at(i, j)).squaredNorm() * grid.dt() / n;
    out.gaps.push_back(gap);

    out.iterations = k + 1;
    // Store the self-consistent triple: u_star is the exact minimizer of the
    // sampled Hamiltonian given (x_star, adjoint) — the pointwise argmin of
    // the necessary condition on this ensemble — while the damped combination
    // u_next only drives the iteration.  At exit u_star and the damped
    // iterate differ by O(sqrt(tol)).
    out.u_star = std::move(u_new);
    out.x_star = ens;
    out.adjoint = std::move(adj);
    out.J_star = cr;
    u = std::move(u_next);
    if (gap <= iter.tol) {
      out.converged = true;
      return out;
    }
  }
  throw NoConvergence("fbsde_fixed_point: control gap " +
                      std::to_string(out.gaps.back()) + " after " +
                      std::to_string(iter.max_iter) + " iterations");
}

Mat RiccatiReport::gain(const LQSpec& spec, int k) const {
  return -(ltilde_inverse(spec) * spec.B(k * dt).transpose() * P[k]);
}

double RiccatiReport::optimal_cost(const LQSpec& spec, const Vec& gamma0) const {
  double j = 0.5 * gamma0.dot(P.front() * gamma0);
  // Trapezoid rule for the additive-noise trace term.
  const int N = static_cast<int>(P.size()) - 1;
  for (int k = 0; k <= N; ++k) {
    const Mat s0 = spec.sigma0 ? spec.sigma0(k * dt) : Mat();
    if (s0.size() == 0) continue;
    const double w = (k == 0 || k == N) ? 0.5 : 1.0;
    j += 0.5 * w * dt * (s0 * s0.transpose() * P[k]).trace();
  }
  return j;
}

namespace {

// One backward RK4 sweep at step h; returns the whole P path (coarse nodes).
std::vector<Mat> riccati_sweep(const Mat& A, const Mat& BLB,
                               const std::function<Mat(double)>& L,
                               const Mat& G, double T, double h, int N) {
  auto rhs = [&](double t, const Mat& P) {
    return Mat(A.transpose() * P + P * A - P * BLB * P + L(t));
  };
  std::vector<Mat> P(N + 1);
  P[N] = G;
  for (int k = N; k > 0; --k) {
    const double t = k * h;
    // Reversed time s = T - t turns -Pdot = rhs into dP/ds = rhs, so the
    // backward sweep is a plain forward RK4 step of size h toward t - h.
    const Mat k1 = rhs(t, P[k]);
    const Mat k2 = rhs(t - 0.5 * h, P[k] + 0.5 * h * k1);
    const Mat k3 = rhs(t - 0.5 * h, P[k] + 0.5 * h * k2);
    const Mat k4 = rhs(t - h, P[k] + h * k3);
    P[k - 1] = P[k] + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!P[k - 1].allFinite())
      throw StiffRiccati("riccati_oracle: non-finite Riccati sweep");
  }
  return P;
}

}  // namespace

RiccatiReport riccati_oracle(const LQSpec& spec, double T, double dt) {
  LQSpec s = spec;
  s.validate();
  // No-delay restriction: every drift atom must sit at lag zero.
  Mat A = Mat::Zero(s.d, s.d);
  for (const auto& q : s.A.measure.quadrature(dt)) {
    require(std::abs(q.theta) <= 1e-12,
            "riccati_oracle: drift measure must be a Dirac at lag zero");
    A += q.weight * s.A.kernel.eval(0.0, 0.0);
  }
  const Mat BLB =
      s.B(0.0) * ltilde_inverse(s) * s.B(0.0).transpose();
  const int N = static_cast<int>(std::llround(T / dt));
  require(std::abs(N * dt - T) <= 1e-9, "riccati_oracle: T/dt must be integral");

  std::vector<Mat> coarse =
      riccati_sweep(A, BLB, s.L, s.terminal_weight, T, dt, N);
  std::vector<Mat> fine =
      riccati_sweep(A, BLB, s.L, s.terminal_weight, T, dt / 2.0, 2 * N);
  if ((coarse.front() - fine.front()).cwiseAbs().maxCoeff() > 1e-6)
    throw StiffRiccati("riccati_oracle: step-halving moves P(0) beyond 1e-6");

  RiccatiReport rep;
  rep.P = std::move(coarse);
  rep.dt = dt;
  rep.T = T;
  return rep;
}

}  // namespace idsee
