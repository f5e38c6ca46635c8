#pragma once

#include <cstdint>

namespace binsplat {

/// Counter-based generator: the i-th draw is a pure function of
/// (seed, stream, i), so the full state is two keys and a counter.
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed = 0, uint64_t stream = 0);

  uint64_t next_u64();
  // Uniform integer in [0, n). n must be > 0.
  uint32_t uniform_below(uint32_t n);
  // Uniform double in [0, 1).
  double uniform();
  double normal();

  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }
  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

 private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t key_;
  uint64_t counter_ = 0;
};

uint64_t splitmix64(uint64_t x);

}  // namespace binsplat
