#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace crossgrip {

/// Integer hash used to derive independent child streams from a seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Deterministic RNG. std::mt19937_64 is bit-exact across platforms, and the
/// uniform/normal transforms below are hand-rolled so the generated sequences
/// are too (the std distributions are implementation-defined). Byte-identical
/// reruns of every command depend on this.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint32_t below(std::uint32_t n) {
    return static_cast<std::uint32_t>(eng_() % n);
  }

  /// Standard normal via Box-Muller (single value per call).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  /// Child stream keyed by id; independent of this generator's state so
  /// derivation order never matters (episode-indexed streams rely on this).
  Rng stream(std::uint64_t id) const {
    return Rng(splitmix64(seed_ ^ (0x9e3779b97f4a7c15ull * (id + 1))));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace crossgrip
