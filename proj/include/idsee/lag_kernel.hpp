#pragma once

#include <functional>
#include <utility>

#include "idsee/common.hpp"

namespace idsee {

// Operator-valued lag kernel K(t, theta), matrix-valued at desk scale
// (rows x cols maps the delayed value into the output space).
struct LagKernel {
  std::function<Mat(double t, double theta)> K;
  int rows = 0;
  int cols = 0;

  Mat eval(double t, double theta) const {
    Mat k = K(t, theta);
    if (!k.allFinite()) throw KernelUnbounded("LagKernel: non-finite kernel value");
    return k;
  }

  static LagKernel identity(int d) {
    return {[d](double, double) { return Mat::Identity(d, d); }, d, d};
  }

  static LagKernel scalar(int d, std::function<double(double, double)> c) {
    auto fn = [d, c = std::move(c)](double t, double theta) {
      return Mat(c(t, theta) * Mat::Identity(d, d));
    };
    return {std::move(fn), d, d};
  }
};

// Scalar control kernel phi(s, t) with a uniform bound.
struct ScalarControlKernel {
  std::function<double(double s, double t)> phi;
  double bound = 1.0;

  double eval(double s, double t) const {
    const double v = phi(s, t);
    if (!std::isfinite(v)) throw KernelUnbounded("ScalarControlKernel: non-finite");
    return v;
  }

  static ScalarControlKernel one() {
    return {[](double, double) { return 1.0; }, 1.0};
  }
};

}  // namespace idsee
