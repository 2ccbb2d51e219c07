#pragma once

#include <cstdint>

namespace tasksumma {

/// splitmix64: Sebastiano Vigna's public-domain 64-bit mixer.
///
/// Used instead of <random> engines/distributions because the standard
/// distributions are implementation-defined: the same seed must generate the
/// same tiling and the same matrix entries on every platform, in the runtime
/// and in the reference oracle alike.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Unbiased draw in [0, bound) by rejection; bound must be >= 1.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform in [-1, 1).
  double symmetric_unit() { return 2.0 * unit() - 1.0; }

 private:
  std::uint64_t state_;
};

/// Seed of the per-block random stream for block (i, j) of a matrix seeded
/// with `seed`. Mixing the three values through the generator gives sibling
/// blocks uncorrelated streams, and lets any party (simulated node, oracle,
/// test) rebuild one block without generating the blocks before it.
inline std::uint64_t block_stream_seed(std::uint64_t seed, std::int64_t i,
                                       std::int64_t j) {
  SplitMix64 g(seed);
  std::uint64_t h = g.next();
  h = SplitMix64(h ^ (static_cast<std::uint64_t>(i) + 0x9e3779b97f4a7c15ULL)).next();
  h = SplitMix64(h ^ (static_cast<std::uint64_t>(j) + 0xbf58476d1ce4e5b9ULL)).next();
  return h;
}

}  // namespace tasksumma
