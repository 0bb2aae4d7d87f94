#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace stainkit {

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Per-task seed: hash(root_seed, image_index, draw_index).
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t image_index, std::uint64_t draw_index) noexcept {
  return mix64(mix64(mix64(root) ^ image_index) ^ (draw_index + 0x632be59bd9b4e019ULL));
}

/// Seeded generator with platform-independent distributions. The standard
/// library distributions are implementation-defined, so uniform and normal
/// variates are derived from the raw mt19937_64 stream here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes two uniforms per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stainkit
