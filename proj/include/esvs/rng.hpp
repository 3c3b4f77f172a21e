#pragma once

// Seeded random source with a fully specified output sequence.
//
// std::mt19937_64 is pinned by the standard, but the std:: distributions
// are not, so the conversions to uniform/normal/index draws live here.

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "esvs/so3.hpp"

namespace esvs {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Haar-uniform rotation (normalized 4-D Gaussian).
  Rotation rotation() {
    for (;;) {
      const double w = normal(), x = normal(), y = normal(), z = normal();
      if (w * w + x * x + y * y + z * z > 1e-12) return {w, x, y, z};
    }
  }

  Vec3 normal3(double stddev) {
    const double a = normal(), b = normal(), c = normal();
    return {stddev * a, stddev * b, stddev * c};
  }

  /// Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t k = v.size(); k > 1; --k) {
      std::swap(v[k - 1], v[index(k)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace esvs
