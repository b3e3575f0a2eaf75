#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "idsee/common.hpp"
#include "idsee/delay_measure.hpp"
#include "idsee/ensemble.hpp"
#include "idsee/lag_kernel.hpp"
#include "idsee/projection.hpp"
#include "idsee/time_grid.hpp"
#include "idsee/weighted_path.hpp"

namespace idsee {

// All L2 pairings on [0, T] use the node-sum rule dt * sum over grid nodes
// of [0, T] (and over the whole retained window for (-infty, T]). The same
// rule appears on both sides of every duality identity, which makes the
// identities exact for grid-aligned atomic measures.

// Linear interpolation of a full-grid column matrix, zero outside the grid.
Vec interpolate_columns(const Mat& vals, const TimeGrid& grid, double t);

// (R Z)(t) = int K(t,theta) Z(t - theta) alpha(dtheta) on [0, T].
// Returns one column per grid node; nodes before 0 are zero.
Mat apply_R(const LagKernel& kernel, const DelayMeasure& measure,
            const WeightedPath& Z);

// Hilbert adjoint (R* Q)(u) = int K(u+theta,theta)^T Q(u+theta) 1_[0,T] alpha.
// Q is a full-grid matrix, read as zero outside [0, T]; the indicator is
// closed at both ends. Output is supported on [-theta_max, T].
Mat apply_R_star(const LagKernel& kernel, const DelayMeasure& measure,
                 const Mat& Q, const TimeGrid& grid);

// | int <RZ, Q> dt - int <Z, R*Q> du | with the matched node-sum quadrature.
// Z must vanish on (-infty, 0].
double duality_residual(const LagKernel& kernel, const DelayMeasure& measure,
                        const WeightedPath& Z, const Mat& Q);

struct OperatorBounds {
  double M0 = 0.0;  // sup_t int |K(t,theta)| |alpha|(dtheta)
  double M = 0.0;   // sup_u int |K(u+theta,theta)| 1_[0,T](u+theta) |alpha|(dtheta)
};

OperatorBounds operator_bounds(const LagKernel& kernel,
                               const DelayMeasure& measure,
                               const TimeGrid& grid);

// Residual of the lag change-of-variables identity for a nonnegative test
// function g(t, theta); zero exactly for grid-aligned atomic measures.
double cv_identity_check(const std::function<double(double, double)>& g,
                         const DelayMeasure& measure, const TimeGrid& grid);

// Discrete L2(0,T) squared norm (node-sum rule) of a full-grid matrix.
double l2_sq_on_horizon(const Mat& vals, const TimeGrid& grid);
// Discrete L2(-infty,T] squared norm over the retained window.
double l2_sq_full(const Mat& vals, const TimeGrid& grid);

// Adapted adjoint (A* Q)(t) = E_t[(R* Q)(t)] on [0, T]: pathwise R*, then the
// per-node regression estimator. Q[i] are full-grid matrices per trajectory.
// The result is restricted to [0, T] (columns before 0 are zero).
std::vector<Mat> adapted_adjoint(const LagKernel& kernel,
                                 const DelayMeasure& measure,
                                 const std::vector<Mat>& Q,
                                 const Ensemble& ensemble,
                                 ConditionalExpectation& estimator);

}  // namespace idsee
