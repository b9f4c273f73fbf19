#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "attnflow/matrix.hpp"

namespace attnflow {

/// Counter-based generator: draw k of stream `seed` is splitmix64(seed ⊕ mix(k)).
///
/// The stream is a pure function of (seed, counter), so results are identical
/// across platforms and standard-library versions. Normals use Box–Muller
/// on pairs of uniforms; no std::*_distribution is involved.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) noexcept : seed_(seed) {}

  static constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  /// Child seed for an independent sub-stream (sweeps, per-seed initial tokens).
  static constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) noexcept {
    return splitmix64(splitmix64(seed) ^ splitmix64(tag + 0x632BE59BD9B4E019ULL));
  }

  std::uint64_t next_u64() noexcept {
    return splitmix64(seed_ ^ splitmix64(counter_++ * 0xD1B54A32D192ED03ULL));
  }

  /// Uniform on (0, 1), never exactly 0.
  double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  Mat normal_mat(std::size_t rows, std::size_t cols, double stddev = 1.0) {
    Mat m(rows, cols);
    for (auto& x : m.data()) x = stddev * normal();
    return m;
  }

  Vect normal_vect(std::size_t n, double stddev = 1.0) {
    Vect v(n);
    for (auto& x : v) x = stddev * normal();
    return v;
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace attnflow
