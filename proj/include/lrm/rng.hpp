#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "lrm/common.hpp"

namespace lrm {

// Deterministic, serializable RNG. xoshiro256++ core seeded through splitmix64,
// so the same seed yields the same stream on every platform (std:: distributions
// are not bit-specified). Normals use Box-Muller without caching the spare value,
// keeping the state exactly the four words below.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (int i = 0; i < 4; ++i) s_[i] = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // i in [lo, hi] inclusive. Modulo bias is irrelevant at our range sizes but
  // rejection keeps it exact anyway.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    LRM_REQUIRE(hi >= lo, "uniform_int: empty range [", lo, ",", hi, "]");
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return lo + static_cast<int64_t>(r % span);
  }

  double normal() {
    // Box-Muller, first output only. u1 in (0,1] to keep log finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // State round-trips as 64 hex chars (4 words, big-endian per word).
  std::string state_hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(64, '0');
    for (int w = 0; w < 4; ++w)
      for (int i = 0; i < 16; ++i)
        out[w * 16 + i] = digits[(s_[w] >> (60 - 4 * i)) & 0xf];
    return out;
  }

  void set_state_hex(const std::string& hex) {
    LRM_REQUIRE(hex.size() == 64, "rng state must be 64 hex chars, got ", hex.size());
    for (int w = 0; w < 4; ++w) {
      uint64_t v = 0;
      for (int i = 0; i < 16; ++i) {
        const char c = hex[w * 16 + i];
        uint64_t d;
        if (c >= '0' && c <= '9') d = static_cast<uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') d = static_cast<uint64_t>(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') d = static_cast<uint64_t>(c - 'A' + 10);
        else throw Error("rng state: invalid hex char");
        v = (v << 4) | d;
      }
      s_[w] = v;
    }
  }

  // Independent stream derived from this generator's seed material plus a key,
  // used for per-pixel sampling jitter that must not depend on evaluation order.
  static Rng derive(uint64_t seed, uint64_t key) {
    Rng r;
    uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (key + 1));
    for (int i = 0; i < 4; ++i) r.s_[i] = splitmix64(x);
    return r;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t s_[4];
};

}  // namespace lrm
