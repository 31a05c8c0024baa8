#pragma once

#include <cmath>
#include <cstdint>

namespace iapf {

// One SplitMix64 step (Steele, Lea & Flood 2014).
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// 64-bit seed mixer used everywhere a derived stream is needed (replicate
// seeds, per-step and per-particle substreams, PMMH estimator streams):
// two SplitMix64 rounds of base ^ (id+1)*odd-constant. Stable across
// platforms; documented so output files can be reproduced externally.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t id) {
  std::uint64_t state = base ^ ((id + 1) * 0xda942042e4dd58b5ULL);
  std::uint64_t z = splitmix64_next(state);
  return z ^ splitmix64_next(state);
}

// xoshiro256++ with SplitMix64 seeding. Self-contained so that draws are
// bit-for-bit reproducible across standard libraries and platforms, which
// the <random> distributions do not guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64_next(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via the Marsaglia polar method; the spare deviate is
  // cached, so interleaving with other draws stays deterministic.
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

  // Unbiased integer in [0, n) via Lemire's multiply-shift rejection.
  int uniform_below(int n) {
    const auto un = static_cast<std::uint64_t>(n);
    while (true) {
      const std::uint64_t x = next_u64();
      const auto m = static_cast<unsigned __int128>(x) * un;
      const auto lo = static_cast<std::uint64_t>(m);
      if (lo >= un || lo >= (-un) % un) return static_cast<int>(m >> 64);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace iapf
