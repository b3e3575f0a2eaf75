#pragma once

#include <cmath>
#include <vector>

#include "idsee/common.hpp"

namespace idsee {

// A finite signed Borel measure on [0, infty): point atoms (lag, signed
// weight) plus a piecewise-constant signed density on [0, theta_max] given by
// breakpoints. Signed weights are stored directly; total variation uses their
// absolute values.
class DelayMeasure {
 public:
  struct Atom {
    double lag;
    double weight;
  };

  // One evaluation node of the lag quadrature: an atom, or a density-cell
  // midpoint with weight value * cell width.
  struct QuadNode {
    double theta;
    double weight;
    bool on_grid;  // atoms are grid-aligned; density midpoints are not
  };

  DelayMeasure() = default;

  DelayMeasure(std::vector<Atom> atoms, std::vector<double> density_breaks = {},
               std::vector<double> density_values = {})
      : atoms_(std::move(atoms)),
        breaks_(std::move(density_breaks)),
        density_(std::move(density_values)) {
    for (const Atom& a : atoms_)
      require(a.lag >= 0.0, "DelayMeasure: atom lag must be >= 0");
    if (!breaks_.empty()) {
      require(breaks_.size() == density_.size() + 1,
              "DelayMeasure: need one more breakpoint than density value");
      require(breaks_.front() >= 0.0, "DelayMeasure: breakpoints must be >= 0");
      for (std::size_t i = 0; i + 1 < breaks_.size(); ++i)
        require(breaks_[i] < breaks_[i + 1],
                "DelayMeasure: breakpoints must be strictly increasing");
    }
  }

  static DelayMeasure dirac(double lag, double weight = 1.0) {
    return DelayMeasure({{lag, weight}});
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<double>& density_breaks() const { return breaks_; }
  const std::vector<double>& density_values() const { return density_; }
  bool has_density() const { return !breaks_.empty(); }

  // Sum of |w_i| plus the exact integral of |density|.
  double total_variation() const {
    double tv = 0.0;
    for (const Atom& a : atoms_) tv += std::abs(a.weight);
    for (std::size_t i = 0; i < density_.size(); ++i)
      tv += std::abs(density_[i]) * (breaks_[i + 1] - breaks_[i]);
    return tv;
  }

  double max_lag() const {
    double m = 0.0;
    for (const Atom& a : atoms_) m = std::max(m, a.lag);
    if (!breaks_.empty()) m = std::max(m, breaks_.back());
    return m;
  }

  // Atom lags must sit on multiples of dt so that the t -> t - theta shift
  // stays grid-aligned; misaligned atoms are rejected, not interpolated.
  void check_atom_alignment(double dt, double tol = 1e-9) const {
    for (const Atom& a : atoms_) {
      const double k = a.lag / dt;
      if (std::abs(k - std::llround(k)) * dt > tol)
        throw MisalignedAtom("DelayMeasure: atom lag " + std::to_string(a.lag) +
                             " is not an integer multiple of dt");
    }
  }

  // Lag quadrature at resolution dt: atoms as-is, each density cell split
  // into subcells of width ~dt evaluated at their midpoints (midpoint rule).
  std::vector<QuadNode> quadrature(double dt) const {
    check_atom_alignment(dt);
    std::vector<QuadNode> nodes;
    for (const Atom& a : atoms_) nodes.push_back({a.lag, a.weight, true});
    for (std::size_t i = 0; i < density_.size(); ++i) {
      const double a = breaks_[i], b = breaks_[i + 1];
      const int nsub = std::max(1, static_cast<int>(std::llround((b - a) / dt)));
      const double h = (b - a) / nsub;
      for (int k = 0; k < nsub; ++k)
        nodes.push_back({a + (k + 0.5) * h, density_[i] * h, false});
    }
    return nodes;
  }

 private:
  std::vector<Atom> atoms_;
  std::vector<double> breaks_;
  std::vector<double> density_;
};

}  // namespace idsee
