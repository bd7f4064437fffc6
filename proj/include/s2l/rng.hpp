#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace s2l {

/// Deterministic counter-based generator. Every stream is keyed by
/// (master seed, purpose label, index), so draws are replayable and
/// independent of evaluation order. The core is the SplitMix64 bijection;
/// normals come from Box-Muller on explicit 53-bit uniforms (the standard
/// library distributions are implementation-defined and not reproducible
/// across platforms).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Derive an independent stream from (master, label, index).
  static Rng stream(std::uint64_t master, std::string_view label,
                    std::uint64_t index = 0) {
    std::uint64_t h = mix(master ^ 0x9e3779b97f4a7c15ULL);
    h = mix(h ^ fnv1a64(label));
    h = mix(h ^ index * 0xbf58476d1ce4e5b9ULL);
    return Rng(h);
  }

  Rng substream(std::string_view label, std::uint64_t index = 0) const {
    return stream(state_, label, index);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  /// Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename Scalar>
  void fill_normal(Scalar* dst, std::int64_t n, double mean = 0.0,
                   double stddev = 1.0) {
    for (std::int64_t i = 0; i < n; ++i) {
      dst[i] = static_cast<Scalar>(mean + stddev * normal());
    }
  }

  static std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace s2l
