#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "idsee/common.hpp"
#include "idsee/smp.hpp"

namespace idsee {

// Linear-quadratic problem data:
//   dX = [ (A X_t) + B(t) v_d ] dt + sum_j [ (C_j X_t) + sigma0_j(t)
//          + D_j(t) v_d ] dW_j,
//   J = 1/2 E[ int ( <L(t) X, X> + <Ltilde v_d, v_d> ) dt
//              + <G X(T), X(T)> ],
// with A, C_j lag-kernel operators on the state segment and L a pointwise
// state weight.
struct LQSpec {
  int d = 2, m = 1, d_u = 1;
  DerivKernel A;
  std::vector<DerivKernel> C;            // one kernel per noise column
  std::function<Mat(double)> B;          // d x d_u
  std::function<Mat(double, int)> D;     // noise column j: d x d_u
  std::function<Mat(double)> L;          // d x d, PSD
  Mat Ltilde;                            // d_u x d_u, symmetric PD
  std::function<Mat(double)> sigma0;     // d x m additive noise (optional)
  Mat terminal_weight;                   // G, defaults to identity
  double margin = 1e-8;

  // Throws SingularWeight unless Ltilde is symmetric with eigenvalues
  // >= margin; fills defaults (zero sigma0, identity terminal weight).
  void validate();
};

// Bundles the LQ data into the Hamiltonian pipeline's context. The running
// state-gradient kernel reads the realized trajectories of `states` (pass the
// ensemble the adjoint will be solved against).
HamiltonianContext lq_context(const LQSpec& spec,
                              const ScalarControlKernel& phi,
                              const DelayMeasure& control_measure,
                              std::shared_ptr<const Ensemble> states = nullptr);

// Monte Carlo cost of a simulated ensemble under the given control.
CostReport cost_evaluate(const LQSpec& spec, const Ensemble& ensemble,
                         const ControlProcess& control,
                         const ScalarControlKernel& phi,
                         const DelayMeasure& control_measure);

// Explicit optimal-control formula
//   u(t) = -Ltilde^{-1} E_t[ int phi(t, t+theta) { B*(t+theta) p(t+theta)
//           + D*(t+theta) q(t+theta) } alpha(dtheta) ],
// with (p, q) zero-extended past T; E_t realized by the same regression
// estimator family as the backward solver. History columns are zero.
ControlProcess lq_optimal_control(const LQSpec& spec, const AdjointPair& adjoint,
                                  const ScalarControlKernel& phi,
                                  const DelayMeasure& control_measure,
                                  const Ensemble& xu,
                                  const IabseeConfig& config);

struct LQSolution {
  ControlProcess u_star;
  std::shared_ptr<Ensemble> x_star;
  AdjointPair adjoint;
  CostReport J_star;
  std::vector<double> j_trace;     // J(u^(k)) per iteration
  std::vector<double> se_trace;
  std::vector<double> gaps;        // M^2-norm control gap per iteration
  int iterations = 0;
  bool converged = false;
};

struct LQIterParams {
  double rho = 0.5;       // damping weight on the new control
  int max_iter = 20;
  double tol = 1e-6;      // exit when E int |u_{k+1} - u_k|^2 dt <= tol
};

// Damped forward-backward fixed point on a fixed noise realization:
// u^{(k+1)} = (1-rho) u^{(k)} + rho * lq_optimal_control(adjoint(X^{u^(k)})).
LQSolution fbsde_fixed_point(const LQSpec& spec, const InitialData& init,
                             const ScalarControlKernel& phi,
                             const DelayMeasure& control_measure,
                             const TimeGrid& grid, const SimParams& params,
                             const LQIterParams& iter,
                             const IabseeConfig& config);

struct RiccatiReport {
  std::vector<Mat> P;   // P at nodes 0, dt, ..., T
  double dt = 0.0;
  double T = 0.0;

  const Mat& at(int k) const { return P[k]; }
  // Feedback law u(t, x) = -Ltilde^{-1} B(t)^T P(t) x evaluated at node k.
  Mat gain(const LQSpec& spec, int k) const;
  // J_opt = 1/2 <P(0) gamma0, gamma0> + 1/2 int tr(sigma0 sigma0^T P) dt.
  double optimal_cost(const LQSpec& spec, const Vec& gamma0) const;
};

// Independent no-delay oracle: RK4 on the backward matrix Riccati equation
//   -Pdot = A^T P + P A - P B Ltilde^{-1} B^T P + L,  P(T) = G,
// with constant A extracted from the spec's drift kernel at lag zero.
// Throws StiffRiccati if halving the step moves P(0) by more than 1e-6.
RiccatiReport riccati_oracle(const LQSpec& spec, double T, double dt);

}  // namespace idsee
