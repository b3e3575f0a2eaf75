#pragma once

#include <memory>
#include <vector>

#include "idsee/common.hpp"
#include "idsee/ensemble.hpp"

namespace idsee {

// Which time-t observables feed the regression basis. Feature evaluation at
// node j reads only columns <= j of the state and Brownian paths, so
// predictions are adapted by construction.
struct FeatureMap {
  int degree = 2;                // polynomial total degree (0, 1 or 2)
  bool use_state = true;         // current state X(t)
  std::vector<double> lags;      // lagged states X(t - theta), grid-aligned
  bool use_noise = false;        // current Brownian value W(t)

  int raw_dim(int d, int m) const {
    int k = 0;
    if (use_state) k += d;
    k += static_cast<int>(lags.size()) * d;
    if (use_noise) k += m;
    return k;
  }

  int basis_size(int d, int m) const {
    const int k = raw_dim(d, m);
    int b = 1;
    if (degree >= 1) b += k;
    if (degree >= 2) b += k * (k + 1) / 2;
    return b;
  }

  Vec raw(const Ensemble& ens, int traj, int node) const;
  Vec basis(const Vec& raw) const;
  // Basis row for every trajectory at a node: (basis_size x n_paths).
  Mat basis_matrix(const Ensemble& ens, int node) const;
};

struct FitDiagnostics {
  int node = -1;
  double time = 0.0;
  int basis = 0;
  double residual_variance = 0.0;
  double gram_condition = 0.0;
};

// Per-node linear-regression estimator realizing E_t[.].
class ProjectionEstimator {
 public:
  ProjectionEstimator() = default;

  bool fitted() const { return fitted_; }
  const Mat& coefficients() const { return coeff_; }
  const FitDiagnostics& diagnostics() const { return diag_; }
  int node() const { return diag_.node; }

  // Predict for one basis vector; coeff is (basis x targets).
  Vec predict(const Vec& basis) const {
    if (!fitted_) throw EstimatorNotFitted("ProjectionEstimator::predict");
    return coeff_.transpose() * basis;
  }

  friend ProjectionEstimator fit(const Ensemble& ens, int node,
                                 const Mat& targets, const FeatureMap& fm,
                                 double ridge);

 private:
  bool fitted_ = false;
  Mat coeff_;  // basis x targets
  FitDiagnostics diag_;
};

// Ridge-regularized least squares on the normal equations. targets is
// (targets_dim x n_paths). ridge < 0 selects the default
// 1e-8 * trace(Gram) / basis_size.
ProjectionEstimator fit(const Ensemble& ens, int node, const Mat& targets,
                        const FeatureMap& fm, double ridge = -1.0);

// Cached per-node regressions against a fixed ensemble and feature map.
// project() maps pathwise targets to their fitted conditional expectations.
class ConditionalExpectation {
 public:
  ConditionalExpectation(const Ensemble& ens, FeatureMap fm, double ridge = -1.0);

  const FeatureMap& features() const { return fm_; }
  int basis_size() const { return basis_; }

  // targets: (targets_dim x n_paths) values at the given node; returns the
  // per-trajectory predictions with the same shape.
  Mat project(int node, const Mat& targets);

  const FitDiagnostics& diagnostics(int node) const;
  std::vector<FitDiagnostics> all_diagnostics() const;

 private:
  struct NodeCache;
  const NodeCache& node_cache(int node);

  const Ensemble* ens_;
  FeatureMap fm_;
  double ridge_;
  int basis_;
  std::vector<std::shared_ptr<NodeCache>> cache_;
};

}  // namespace idsee
