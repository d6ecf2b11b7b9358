#pragma once

#include "mm/common.hpp"

#include <array>
#include <cmath>
#include <string_view>
#include <vector>

namespace mm {

// Deterministic random number generator: xoshiro256++ seeded through
// splitmix64, with Box-Muller normal draws.  All distributions are implemented
// here rather than with <random> so that a given seed produces the same stream
// on every standard library and every run; several toolkit operations promise
// byte-identical outputs per seed and sub-streams that are independent of
// scheduling.
//
// Sub-streams: `split(id)` derives a statistically independent generator from
// the parent's *seed* (not its current position), so split streams are stable
// no matter how much of the parent stream has been consumed.
class Rng {
public:
  static constexpr const char* algorithm_id = "xoshiro256++/box-muller";

  explicit Rng(u64 seed) : seed_(seed) {
    // splitmix64 expansion of the seed into the 256-bit state.
    u64 x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  u64 seed() const { return seed_; }

  u64 next_u64() {
    const u64 result = rotl(state_[0] + state_[3], 23) + state_[0];
    const u64 t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1), 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Unbiased uniform index in [0, n); n must be nonzero.
  size_t next_index(size_t n) {
    const u64 bound = static_cast<u64>(n);
    const u64 threshold = (~u64{0} - bound + 1) % bound;  // 2^64 mod n
    for (;;) {
      const u64 r = next_u64();
      if (r >= threshold) return static_cast<size_t>(r % bound);
    }
  }

  // Standard normal via Box-Muller; draws are generated in pairs and the
  // second value cached, so one call consumes either two or zero uniforms.
  double next_normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1]: keeps log() finite
    const double u2 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * kPi * u2;
    cached_ = radius * std::sin(angle);
    have_cached_ = true;
    return radius * std::cos(angle);
  }

  double next_normal(double mean, double stddev) { return mean + stddev * next_normal(); }

  // Derive an independent generator keyed by (seed, id).  Split streams do not
  // depend on the parent's position.
  Rng split(u64 id) const {
    u64 x = seed_;
    u64 mixed = splitmix64(x) ^ (id * 0x9e3779b97f4a7c15ULL);
    return Rng(splitmix64(mixed) ^ id);
  }

  // Same, keyed by a label (FNV-1a hash of the text).
  Rng split(std::string_view label) const {
    u64 h = 1469598103934665603ULL;
    for (const char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    return split(h);
  }

  // Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& values) {
    for (size_t i = values.size(); i > 1; --i) {
      const size_t j = next_index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  // k distinct indices drawn from [0, n), in draw order.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<size_t> picked;
    picked.reserve(k);
    for (size_t i = 0; i < k && i < n; ++i) {
      const size_t j = i + next_index(n - i);
      std::swap(pool[i], pool[j]);
      picked.push_back(pool[i]);
    }
    return picked;
  }

private:
  static u64 splitmix64(u64& x) {
    x += 0x9e3779b97f4a7c15ULL;
    u64 z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static u64 rotl(u64 x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<u64, 4> state_;
  u64 seed_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace mm
