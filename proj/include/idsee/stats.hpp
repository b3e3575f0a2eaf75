#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "idsee/common.hpp"

namespace idsee {

// Pairwise summation with a fixed reduction tree, so results are identical
// regardless of how the values were produced (worker count, chunking).
inline double pairwise_sum(const double* x, std::size_t n) {
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

inline double pairwise_sum(const std::vector<double>& x) {
  return pairwise_sum(x.data(), x.size());
}

inline double mean(const std::vector<double>& x) {
  require(!x.empty(), "mean: empty sample");
  return pairwise_sum(x) / static_cast<double>(x.size());
}

struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
};

// Standard error via contiguous batch means (default 10 batches).
inline MeanSE batch_mean_se(const std::vector<double>& x, int batches = 10) {
  require(!x.empty(), "batch_mean_se: empty sample");
  const std::size_t n = x.size();
  if (static_cast<std::size_t>(batches) > n) batches = static_cast<int>(n);
  std::vector<double> bm(batches, 0.0);
  for (int b = 0; b < batches; ++b) {
    const std::size_t lo = n * b / batches, hi = n * (b + 1) / batches;
    bm[b] = pairwise_sum(x.data() + lo, hi - lo) / static_cast<double>(hi - lo);
  }
  MeanSE out;
  out.mean = pairwise_sum(x) / static_cast<double>(n);
  if (batches < 2) return out;
  double ss = 0.0;
  for (int b = 0; b < batches; ++b) ss += (bm[b] - out.mean) * (bm[b] - out.mean);
  out.se = std::sqrt(ss / (batches * (batches - 1.0)));
  return out;
}

}  // namespace idsee
