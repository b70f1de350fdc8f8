#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace tactiforce {

using Rng = std::mt19937_64;

// The standard distributions are implementation-defined; these are not, so
// seeded artifacts are identical across toolchains.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Standard normal via Box-Muller (one draw per call, two uniforms consumed).
inline double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return rng() % n; }

template <typename RandomIt>
void seeded_shuffle(RandomIt first, RandomIt last, Rng& rng) {
  for (auto i = last - first - 1; i > 0; --i) {
    std::swap(first[i], first[uniform_index(rng, static_cast<std::uint64_t>(i) + 1)]);
  }
}

}  // namespace tactiforce
