#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>

namespace sebm {

// splitmix64 finalizer; also the workhorse for seed derivation.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_mix(std::uint64_t h, std::uint64_t k) {
  return mix64(h ^ (mix64(k) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

/// Counter-style splitmix64 stream. Cheap to derive, so every
/// (replicate, sweep, step, particle) draw can own an independent stream and
/// results do not depend on execution order or worker count.
/// Satisfies UniformRandomBitGenerator.
class RngStream {
public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed) : state_(mix64(seed)) {}

  RngStream(std::initializer_list<std::uint64_t> keys) : state_(0x8f1b'cbd1'4a9e'55d3ULL) {
    for (std::uint64_t k : keys) state_ = hash_mix(state_, k);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~0ULL; }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform on [0, 1)
  double uniform01() { return double((*this)() >> 11) * 0x1.0p-53; }

  // uniform on (0, 1); safe under log()
  double uniform_pos() {
    double u;
    do { u = uniform01(); } while (u == 0.0);
    return u;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

namespace detail {

// One-sided standard-normal tail sampler, x >= a with a > 0
// (translated-exponential rejection).
inline double normal_tail(RngStream& rng, double a) {
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double x = a - std::log(rng.uniform_pos()) / lambda;
    const double d = x - lambda;
    if (std::log(rng.uniform_pos()) <= -0.5 * d * d) return x;
  }
}

} // namespace detail

/// Draw from N(mean, sd^2) truncated to [lo, hi]. Robust in far tails
/// (the box can sit many standard deviations from the mean).
inline double truncated_normal(RngStream& rng, double lo, double hi, double mean, double sd) {
  if (!(sd > 0.0)) throw std::invalid_argument("truncated_normal: sd must be positive");
  if (!(lo < hi)) throw std::invalid_argument("truncated_normal: empty interval");
  double a = (lo - mean) / sd;
  double b = (hi - mean) / sd;
  bool flipped = false;
  if (b <= 0.0) { // mirror so the interval sits on the right
    const double t = a;
    a = -b;
    b = -t;
    flipped = true;
  }
  double x;
  if (a <= 0.0) {
    // interval straddles the mode
    do { x = rng.normal(); } while (x < a || x > b);
  } else if (b - a > 0.5 / (a + 1.0)) {
    // right tail, wide enough for one-sided rejection
    do { x = detail::normal_tail(rng, a); } while (x > b);
  } else {
    // narrow tail interval: uniform proposal, density bound at a
    for (;;) {
      x = a + (b - a) * rng.uniform01();
      if (std::log(rng.uniform_pos()) <= 0.5 * (a * a - x * x)) break;
    }
  }
  if (flipped) x = -x;
  return mean + sd * x;
}

/// Draw from a density proportional to exp(slope * x) on [lo, hi]
/// (the flat-precision limit of a truncated normal).
inline double truncated_exponential_linear(RngStream& rng, double lo, double hi, double slope) {
  if (!(lo < hi)) throw std::invalid_argument("truncated_exponential_linear: empty interval");
  const double s = slope * (hi - lo);
  const double u = rng.uniform_pos();
  double t;
  if (std::abs(s) < 1e-12) {
    t = u;
  } else if (s > 0.0) {
    // inverse CDF written against exp(-s), stable for large s
    t = 1.0 + std::log(u + (1.0 - u) * std::exp(-s)) / s;
  } else {
    t = std::log1p(u * std::expm1(s)) / s;
  }
  return lo + t * (hi - lo);
}

} // namespace sebm
