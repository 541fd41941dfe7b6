#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace slate {

// SplitMix64 stream. Hand-rolled so that draws are bit-identical across
// platforms; std::uniform_*_distribution is not pinned by the standard.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // unbiased draw in [0, n), n >= 1
  uint64_t below(uint64_t n) {
    const uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  int pick_index(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

  // index into a cumulative categorical; probs need not be normalized
  int categorical(std::span<const double> probs);

 private:
  uint64_t state_;
};

// Stable 64-bit mixing for stream derivation (seed trees, per-trial streams).
uint64_t mix_u64(uint64_t a, uint64_t b);
uint64_t derive_seed(uint64_t base, uint64_t stream, uint64_t index = 0);
uint64_t fnv1a(std::string_view text, uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace slate
