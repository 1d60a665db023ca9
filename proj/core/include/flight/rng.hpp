#pragma once

#include <cstdint>
#include <string_view>

namespace flight {

// splitmix64: tiny, portable, identical across platforms. std::mt19937 plus
// the standard distributions is implementation-defined, so synthetic weights
// and fuzz inputs go through this instead.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next() {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, n)
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }

  // [0, 1)
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // [-1, 1)
  double sym() { return unit() * 2.0 - 1.0; }

  int64_t range(int64_t lo, int64_t hi) {  // inclusive
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
  }
};

inline uint64_t hash_str(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace flight
