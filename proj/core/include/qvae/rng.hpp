#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace qvae {

// Deterministic random source. All randomness in the library flows through
// this class so that a run is a pure function of its seeds. std::mt19937_64
// has a standardized bit-exact sequence; the uniform/normal transforms below
// are hand-rolled because the std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform integer in [0, n), n >= 1.
  uint64_t uniform_index(uint64_t n) { return gen_() % n; }

  /// Uniform real in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform real in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. Pairs are generated and cached so the
  /// consumed engine state depends only on the call count.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Independent child stream. Distinct labels give decorrelated streams;
  /// the mixing is splitmix64 over an FNV-1a hash of the label.
  Rng derive(std::string_view label) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return Rng(splitmix64(seed_ ^ h));
  }

  uint64_t seed() const { return seed_; }

 private:
  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t seed_ = 0;
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace qvae
