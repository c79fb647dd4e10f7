#pragma once

// Counter-based deterministic RNG. Each (seed, stream) pair yields an
// independent sequence; draws are pure functions of (key, counter), so
// replications indexed by stream are order-independent and reruns are
// bit-identical. std distributions are avoided on purpose: their sequences
// are not pinned across library versions.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ivpol/common.hpp"

namespace ivpol {

namespace detail {
inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer: a bijective mix with full avalanche.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(detail::mix64(seed + detail::kGolden) ^ detail::mix64(stream * detail::kGolden + 0x5851F42D4C957F2Dull)) {}

  std::uint64_t next_u64() {
    counter_ += detail::kGolden;
    return detail::mix64(key_ + counter_);
  }

  // Uniform on the open interval (0,1): 53-bit grid centers, never 0 or 1.
  double next_u01() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  bool next_bernoulli(double p) { return next_u01() < p; }

  // Inverse-CDF draw over a pmf; the final category absorbs rounding slack.
  std::size_t next_categorical(const std::vector<double>& pmf) {
    const double u = next_u01();
    double cum = 0.0;
    for (std::size_t k = 0; k + 1 < pmf.size(); ++k) {
      cum += pmf[k];
      if (u < cum) return k;
    }
    return pmf.empty() ? 0 : pmf.size() - 1;
  }

  double next_normal() { return inverse_normal_cdf(next_u01()); }
  double next_normal(double mean, double sd) { return mean + sd * next_normal(); }

  // Phi^{-1} via safeguarded Newton on erfc; accurate to ~1 ulp for u in (0,1).
  static double inverse_normal_cdf(double u) {
    if (!(u > 0.0 && u < 1.0)) throw ValidationError("inverse_normal_cdf: argument must lie in (0,1)");
    const bool flip = u > 0.5;
    const double p = flip ? 1.0 - u : u;  // p in (0, 1/2]
    // Central start is linear in p; tail start -sqrt(-2 log p) overshoots
    // slightly in magnitude, so Newton walks inward monotonically.
    double x = (p >= 0.3) ? (p - 0.5) * 2.5066282746310002 : -std::sqrt(-2.0 * std::log(p));
    for (int it = 0; it < 60; ++it) {
      const double cdf = 0.5 * std::erfc(-x * 0.7071067811865475244);
      const double pdf = 0.3989422804014326779 * std::exp(-0.5 * x * x);
      if (pdf <= 0.0) break;
      const double step = (cdf - p) / pdf;
      const double x_new = x - step;
      x = x_new;
      if (std::abs(step) < 1e-15 * (1.0 + std::abs(x))) break;
    }
    return flip ? -x : x;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Derives a child seed for replication r of batch b under a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t batch, std::uint64_t rep) {
  return detail::mix64(detail::mix64(master + detail::kGolden * (batch + 1)) + rep * detail::kGolden);
}

}  // namespace ivpol
