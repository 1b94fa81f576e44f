#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "earlypsd/types.hpp"

namespace earlypsd {

/// Seeded generator with library-independent transforms. The standard
/// distributions are implementation-defined, so uniform, Gaussian and
/// Laplace draws are written out here over the raw 64-bit engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Derives an independent stream from a base seed and stream ids.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t h = splitmix(seed);
    for (std::uint64_t id : ids) h = splitmix(h ^ splitmix(id + 0x632be59bd9b4e019ULL));
    return Rng(h);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  /// Zero-mean Laplace with the given scale, by inverse CDF.
  double laplace(double scale) {
    const double u = uniform() - 0.5;
    const double sgn = u < 0.0 ? -1.0 : 1.0;
    return -scale * sgn * std::log(1.0 - 2.0 * std::abs(u));
  }

  /// Circular complex Gaussian with E|z|^2 = 1.
  Complex complex_gaussian() {
    const double re = gaussian();
    const double im = gaussian();
    return Complex(re, im) * std::sqrt(0.5);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace earlypsd
