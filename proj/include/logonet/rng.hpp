#pragma once

#include <cmath>
#include <cstdint>

#include "logonet/common.hpp"

namespace logonet {

// Deterministic splittable generator built on SplitMix64. Child streams are
// derived by hashing (state, label), so every consumer can be keyed by a
// stable purpose/index pair instead of sharing mutable state. All transforms
// below use integer arithmetic plus libm only, which keeps artifacts bitwise
// reproducible for a fixed build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  // Child stream keyed by a label; does not advance this stream.
  Rng split(std::uint64_t label) const {
    Rng child(0);
    child.state_ = mix(state_ ^ mix(label + kGolden));
    return child;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Uniform in [0, n). Modulo bias is < 2^-53 for any n we use.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("Rng::below: n must be positive");
    return next_u64() % n;
  }

  // Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw ArgumentError("Rng::uniform_int: empty range");
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller; one draw per call, no cached twin.
  double normal() {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

// Stable stream labels so independent pipeline stages never share draws.
namespace rng_stream {
constexpr std::uint64_t kModelInit = 1;
constexpr std::uint64_t kMasking = 2;
constexpr std::uint64_t kBatch = 3;
constexpr std::uint64_t kData = 4;
constexpr std::uint64_t kKmeans = 5;
constexpr std::uint64_t kCrop = 6;
constexpr std::uint64_t kEnsemble = 7;
}  // namespace rng_stream

}  // namespace logonet
