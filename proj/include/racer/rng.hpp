#pragma once

#include <cmath>
#include <random>

// Distribution sampling on top of std::mt19937_64 that does not depend on
// implementation-defined std::*_distribution internals, so streams are
// reproducible across standard libraries.
namespace racer::rng {

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

/// Standard normal via Box-Muller; consumes exactly two engine draws.
inline double normal(std::mt19937_64& g) {
  const double u1 = 1.0 - uniform01(g);  // (0, 1]
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace racer::rng
