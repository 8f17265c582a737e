#pragma once

#include <cstdint>

namespace dualpf {

// Counter-based generator: every draw is mix(key, counter), so a stream is
// fully described by two integers and can be split into independent child
// streams without touching the parent.
class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next() { return mix(key_ ^ mix(counter_++)); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  // Child stream keyed by (this key, stream id); the parent counter is unchanged.
  CounterRng split(std::uint64_t stream) const { return CounterRng(mix(key_ ^ mix(stream ^ 0xD1B54A32D192ED03ULL))); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Stateless hash of a tuple of integers, used for seeded splits and subsampling.
inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = CounterRng::mix(seed);
  h = CounterRng::mix(h ^ a);
  h = CounterRng::mix(h ^ b);
  return CounterRng::mix(h ^ c);
}

}  // namespace dualpf
