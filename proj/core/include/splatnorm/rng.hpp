#pragma once

#include <cstdint>

namespace splatnorm {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// bit-reproducible across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal();
  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n);

  // Independent deterministic substream; does not advance this stream.
  Rng fork(uint64_t stream_id) const;

 private:
  uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace splatnorm
