#include "idsee/projection.hpp"

#include <cmath>
#include <limits>

namespace idsee {

Vec FeatureMap::raw(const Ensemble& ens, int traj, int node) const {
  const TimeGrid& g = ens.grid();
  const int d = ens.dim(), m = ens.noise_dim();
  Vec r(raw_dim(d, m));
  int at = 0;
  if (use_state) {
    r.segment(at, d) = ens.states(traj).col(node);
    at += d;
  }
  for (double lag : lags) {
    const int k = static_cast<int>(std::llround(lag / g.dt()));
    require(std::abs(k * g.dt() - lag) <= 1e-9, "FeatureMap: lag not grid-aligned");
    const int j = std::max(0, node - k);
    r.segment(at, d) = ens.states(traj).col(j);
    at += d;
  }
  if (use_noise) {
    const int j = std::max(0, node - g.zero_index());
    r.segment(at, m) = ens.brownian(traj).col(j);
    at += m;
  }
  return r;
}

Vec FeatureMap::basis(const Vec& raw) const {
  const int k = static_cast<int>(raw.size());
  int b = 1;
  if (degree >= 1) b += k;
  if (degree >= 2) b += k * (k + 1) / 2;
  Vec out(b);
  out[0] = 1.0;
  int at = 1;
  if (degree >= 1) {
    out.segment(at, k) = raw;
    at += k;
  }
  if (degree >= 2)
    for (int i = 0; i < k; ++i)
      for (int j = i; j < k; ++j) out[at++] = raw[i] * raw[j];
  return out;
}

Mat FeatureMap::basis_matrix(const Ensemble& ens, int node) const {
  const int n = ens.n_paths();
  const int b = basis_size(ens.dim(), ens.noise_dim());
  Mat phi(b, n);
  for (int i = 0; i < n; ++i) phi.col(i) = basis(raw(ens, i, node));
  return phi;
}

namespace {

struct NormalEq {
  Eigen::LDLT<Mat> ldlt;
  double cond = 0.0;
  double ridge_used = 0.0;
};

NormalEq build_normal_equations(const Mat& phi, double ridge, int n_paths) {
  const int b = static_cast<int>(phi.rows());
  if (n_paths < 10 * b)
    throw UnderdeterminedFit("projection: need >= 10 x basis trajectories (" +
                             std::to_string(n_paths) + " < " +
                             std::to_string(10 * b) + ")");
  Mat gram = phi * phi.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> es(gram);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  NormalEq ne;
  ne.cond = (lo > 0.0) ? hi / lo : std::numeric_limits<double>::infinity();
  if (ridge < 0.0) ridge = 1e-8 * gram.trace() / b;
  if (ridge == 0.0 && ne.cond > 1e12)
    throw SingularNormalMatrix("projection: Gram condition estimate " +
                               std::to_string(ne.cond) + " > 1e12 with ridge 0");
  ne.ridge_used = ridge;
  gram.diagonal().array() += ridge;
  ne.ldlt.compute(gram);
  return ne;
}

}  // namespace

ProjectionEstimator fit(const Ensemble& ens, int node, const Mat& targets,
                        const FeatureMap& fm, double ridge) {
  if (!targets.allFinite()) throw NonFinite("projection fit: non-finite target");
  require(targets.cols() == ens.n_paths(),
          "projection fit: one target column per trajectory required");
  const Mat phi = fm.basis_matrix(ens, node);
  NormalEq ne = build_normal_equations(phi, ridge, ens.n_paths());
  ProjectionEstimator est;
  est.coeff_ = ne.ldlt.solve(phi * targets.transpose());
  est.fitted_ = true;
  est.diag_.node = node;
  est.diag_.time = ens.grid().node(node);
  est.diag_.basis = static_cast<int>(phi.rows());
  est.diag_.gram_condition = ne.cond;
  const Mat resid = targets - est.coeff_.transpose() * phi;
  est.diag_.residual_variance =
      resid.squaredNorm() / static_cast<double>(targets.size());
  return est;
}

struct ConditionalExpectation::NodeCache {
  NormalEq ne;
  FitDiagnostics diag;
};

ConditionalExpectation::ConditionalExpectation(const Ensemble& ens,
                                               FeatureMap fm, double ridge)
    : ens_(&ens),
      fm_(std::move(fm)),
      ridge_(ridge),
      basis_(fm_.basis_size(ens.dim(), ens.noise_dim())),
      cache_(ens.grid().size()) {}

const ConditionalExpectation::NodeCache& ConditionalExpectation::node_cache(
    int node) {
  require(node >= 0 && node < static_cast<int>(cache_.size()),
          "ConditionalExpectation: node out of range");
  if (!cache_[node]) {
    auto nc = std::make_shared<NodeCache>();
    const Mat phi = fm_.basis_matrix(*ens_, node);
    nc->ne = build_normal_equations(phi, ridge_, ens_->n_paths());
    nc->diag.node = node;
    nc->diag.time = ens_->grid().node(node);
    nc->diag.basis = basis_;
    nc->diag.gram_condition = nc->ne.cond;
    cache_[node] = std::move(nc);
  }
  return *cache_[node];
}

Mat ConditionalExpectation::project(int node, const Mat& targets) {
  if (!targets.allFinite())
    throw NonFinite("ConditionalExpectation: non-finite target");
  const NodeCache& nc = node_cache(node);
  const Mat phi = fm_.basis_matrix(*ens_, node);
  const Mat coeff = nc.ne.ldlt.solve(phi * targets.transpose());
  Mat pred = coeff.transpose() * phi;
  const Mat resid = targets - pred;
  cache_[node]->diag.residual_variance =
      resid.squaredNorm() / static_cast<double>(targets.size());
  return pred;
}

const FitDiagnostics& ConditionalExpectation::diagnostics(int node) const {
  require(node >= 0 && node < static_cast<int>(cache_.size()) && cache_[node],
          "ConditionalExpectation: node not fitted");
  return cache_[node]->diag;
}

std::vector<FitDiagnostics> ConditionalExpectation::all_diagnostics() const {
  std::vector<FitDiagnostics> out;
  for (const auto& c : cache_)
    if (c) out.push_back(c->diag);
  return out;
}

}  // namespace idsee
