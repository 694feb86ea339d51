#pragma once

#include <cstdint>

namespace cenlab {

// Counter-based stream: the k-th draw is a pure function of (seed, k).
// Restoring (seed, counter) from a snapshot resumes the exact stream, so
// counterfactual branches that consume the same number of draws see the
// same randomness. splitmix64 finalizer over seed + golden-ratio strides.
class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(uint64_t seed) : seed_(seed) {}

  uint64_t next_u64() {
    uint64_t z = seed_ + 0x9e3779b97f4a7c15ull * ++counter_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Unbiased enough for small n; n must be positive.
  uint32_t below(uint32_t n) { return static_cast<uint32_t>(next_u64() % n); }

  // Uniform in [0, 1).
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Normal(0,1), one draw per call (polar would consume a variable count).
  // Sum of 12 uniforms minus 6 is plenty for weight init.
  double gauss() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += unit();
    return s - 6.0;
  }

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }
  void set_state(uint64_t seed, uint64_t counter) {
    seed_ = seed;
    counter_ = counter;
  }

  bool operator==(const CounterRng&) const = default;

 private:
  uint64_t seed_ = 0;
  uint64_t counter_ = 0;
};

// Stable stream derivation so shards / substreams don't collide.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  CounterRng r(base ^ 0x5851f42d4c957f2dull);
  r.set_state(r.seed() + stream * 0x9e3779b97f4a7c15ull, 0);
  return r.next_u64();
}

inline uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace cenlab
