#pragma once

#include <cmath>
#include <cstdint>

#include "idsee/common.hpp"

namespace idsee {

// Counter-based normal stream: every draw is a pure function of
// (seed, trajectory, step, substream), so regeneration is bit-identical and
// independent of evaluation order or worker count.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Standard normal via Box-Muller on two counter-keyed uniforms.
  double normal(std::uint64_t traj, std::uint64_t step, std::uint64_t dim) const {
    const std::uint64_t base = key(traj, step, 2 * dim);
    const double u1 = uniform(base);
    const double u2 = uniform(key(traj, step, 2 * dim + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  Vec normals(std::uint64_t traj, std::uint64_t step, int m) const {
    Vec z(m);
    for (int i = 0; i < m; ++i) z[i] = normal(traj, step, static_cast<std::uint64_t>(i));
    return z;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key(std::uint64_t traj, std::uint64_t step, std::uint64_t sub) const {
    std::uint64_t h = mix(seed_ ^ 0x6A09E667F3BCC909ull);
    h = mix(h ^ (traj * 0xD1B54A32D192ED03ull));
    h = mix(h ^ (step * 0x8CB92BA72F3D8DD7ull));
    h = mix(h ^ (sub * 0xA24BAED4963EE407ull));
    return h;
  }

  // Uniform in (0, 1]: never 0, so log() is safe.
  static double uniform(std::uint64_t h) {
    return (static_cast<double>(h >> 11) + 1.0) * (1.0 / 9007199254740992.0);
  }

  std::uint64_t seed_;
};

}  // namespace idsee
