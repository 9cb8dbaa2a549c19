#pragma once

#include <cmath>
#include <cstdint>

namespace binlat {

// Seedable generator used by all simulation code: xoshiro256++ with state
// expanded from a 64-bit seed by splitmix64.  Stream splitting rule for
// replicated experiments: replication i draws from a generator seeded with
//   substream_seed(master, i) = splitmix64_mix(master ^ (i+1) * 0x9E3779B97F4A7C15)
// so tables are reproducible for any replication count and thread layout.

inline std::uint64_t splitmix64_mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) {
      s = splitmix64_mix(s);
      word = s;
    }
    have_spare_ = false;
  }

  static std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64_mix(master ^ (index + 1) * 0x9E3779B97F4A7C15ULL);
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

  // uniform on (0,1); 53-bit mantissa, never exactly 0 or 1
  double uniform() {
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return u == 0.0 ? 0x1.0p-54 : u;
  }

  // standard normal via Marsaglia polar; one spare kept across calls
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // m independent Bernoulli draws; draw count is fixed at m so the consumed
  // stream length does not depend on p
  int binomial(int m, double p) {
    int y = 0;
    for (int i = 0; i < m; ++i) y += bernoulli(p) ? 1 : 0;
    return y;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool have_spare_;
};

}  // namespace binlat
