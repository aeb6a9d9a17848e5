#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>
#include <string_view>

namespace prospec {

// Deterministic PRNG with fully specified output. The generator is
// xoshiro256** seeded through splitmix64; uniform/normal draws are defined
// here rather than via std:: distributions so that streams are byte-stable
// across standard libraries, not just across runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Box-Muller, one draw per call. The sine branch is discarded to keep the
  // stream position independent of call parity.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Integer in [0, n).
  uint64_t next_below(uint64_t n) {
    // Rejection-free modulo would bias; use Lemire-style rejection.
    if (n == 0) return 0;
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Derive an independent child stream, e.g. derive("replay").
  Rng derive(std::string_view tag) const {
    uint64_t h = 0x9e3779b97f4a7c15ull;
    for (const char c : tag) h = (h ^ static_cast<uint64_t>(c)) * 0x100000001b3ull;
    uint64_t x = s_[0] ^ h;
    return Rng(splitmix64(x));
  }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  uint64_t s_[4];
};

}  // namespace prospec
