#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace forec {

/// splitmix64 step: mixes the state and returns the next 64-bit word.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// One-shot mix, used to derive per-item seeds (seed XOR item id).
inline uint64_t splitmix64_mix(uint64_t x) {
  return splitmix64(x);
}

/// Deterministic counter-based RNG. The stream depends only on the seed, not
/// on platform or standard-library version, so experiment outputs stay
/// reproducible across toolchains.
class Rng {
 public:
  Rng() : state_(0x853c49e6748fea9bull) {}
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform() {
    return double(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  float uniform_f(float lo, float hi) { return float(uniform(double(lo), double(hi))); }

  /// Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny relative to 2^64.
    return next_u64() % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  /// Derives an independent substream named by `tag`. Tag-based derivation
  /// keeps streams stable when unrelated draw sites are added or removed.
  Rng fork(std::string_view tag) const {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char c : tag) {
      h ^= uint64_t(uint8_t(c));
      h *= 0x100000001b3ull;
    }
    uint64_t s = state_ ^ h;
    return Rng(splitmix64(s));
  }

 private:
  uint64_t state_;
};

}  // namespace forec
