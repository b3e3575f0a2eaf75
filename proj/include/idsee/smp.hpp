#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "idsee/common.hpp"
#include "idsee/forward_see.hpp"
#include "idsee/iabsee.hpp"
#include "idsee/stats.hpp"

namespace idsee {

// Lag kernel that may depend on the realized trajectory (needed for cost
// gradients along a state path, e.g. quadratic running costs).
struct StateKernel {
  std::function<Mat(double t, double theta, int traj)> K;
  int rows = 0;
  int cols = 0;
  DelayMeasure measure;
};

// Everything the maximum-principle pipeline needs: dynamics, running and
// terminal costs with their derivatives, and the control-delay structure.
struct HamiltonianContext {
  Coefficients coeffs;
  std::function<double(double, const Segment&, const Vec& v_d)> l;
  StateKernel dl_dx;  // 1 x d gradient kernel of l w.r.t. the state segment
  std::function<Vec(double, const Vec& v_d)> l_v;  // d_u
  std::function<double(const Vec&)> h;
  std::function<Vec(const Vec&)> h_x;
  ScalarControlKernel phi = ScalarControlKernel::one();
  DelayMeasure control_measure = DelayMeasure::dirac(0.0);
};

// H(t, x_t, v, p, q) = <b, p> + <sigma, q>_HS + l.
double hamiltonian_eval(const HamiltonianContext& ctx, double t,
                        const Segment& x, const Vec& v, const Vec& p,
                        const Mat& q);

// p = Y-component, q = Z-component of the adjoint backward solution;
// p(T) = h_x(X(T)), both zero beyond T.
struct AdjointPair {
  BackwardSolution sol;
  const BackwardSolution& backward() const { return sol; }
};

// Solves the adjoint equation by delegating to the anticipated backward
// solver with the lag-kernel adjoint generator.
AdjointPair solve_adjoint(const HamiltonianContext& ctx, const Ensemble& xu,
                          const IabseeConfig& config);

// Linearized state equation driven by the perturbation direction vhat
// (zero initial history, same noise keys as the forward ensemble).
Ensemble solve_variational(const HamiltonianContext& ctx,
                           const ControlProcess& vhat, const TimeGrid& grid,
                           const SimParams& params);

struct CostReport {
  double J = 0.0;
  double se = 0.0;
};

// J = E[ int_0^T l(t, X_t, v_d(t)) dt + h(X(T)) ] for a simulated ensemble.
CostReport cost_evaluate_generic(const HamiltonianContext& ctx,
                                 const Ensemble& ens,
                                 const ControlProcess& control);

struct ResidualTable {
  std::vector<int> nodes;       // grid node indices
  std::vector<double> times;
  std::vector<Vec> probes;
  Mat value;                    // nodes x probes: E<G(t), v_k - u(t)>
  Mat se;                       // batch standard errors
  double min_value = 0.0;
  double min_se = 0.0;
};

// Necessary-condition table: G(t) is the regression estimate of the
// conditional lag-integrated control gradient of the Hamiltonian along u.
ResidualTable necessary_residual(const HamiltonianContext& ctx,
                                 const ControlProcess& u, const Ensemble& xu,
                                 const AdjointPair& adjoint,
                                 const std::vector<Vec>& probes,
                                 const std::vector<int>& nodes,
                                 const IabseeConfig& config);

struct GateauxReport {
  double fd = 0.0;        // Richardson-extrapolated central difference
  double analytic = 0.0;  // first-order expansion value
  double se = 0.0;        // batch SE of the analytic estimator
  std::vector<double> fd_ladder;
};

GateauxReport gateaux_derivative(const HamiltonianContext& ctx,
                                 const InitialData& init,
                                 const ControlProcess& u,
                                 const ControlProcess& vhat,
                                 const TimeGrid& grid, const SimParams& params,
                                 const std::vector<double>& eps_ladder);

struct DualityReport {
  MeanSE lhs;  // E<h_x(X(T)), Xhat(T)>
  MeanSE rhs;  // expanded integration-by-parts right side
  MeanSE gap;  // per-trajectory lhs - rhs
};

// The master integration-by-parts identity behind the necessary condition,
// evaluated term-by-term with the solved (p, q).
DualityReport duality_bookkeeping(const HamiltonianContext& ctx,
                                  const InitialData& init,
                                  const ControlProcess& u,
                                  const ControlProcess& vhat,
                                  const TimeGrid& grid, const SimParams& params,
                                  const IabseeConfig& config);

struct ConvexityReport {
  double min_gap_H = 0.0;
  double min_gap_h = 0.0;
  int violations = 0;
};

// Samples convexity gaps of H in (x, v) (constant segments) and of h.
ConvexityReport sufficient_conditions_probe(const HamiltonianContext& ctx,
                                            int samples, std::uint64_t seed);

}  // namespace idsee
