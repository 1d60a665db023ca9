#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "flight/fp16.hpp"

namespace flight::lut {

inline constexpr uint32_t kEntries = 256;

enum class Table : uint8_t { Exp = 0, Silu = 1, Gelu = 2 };
inline constexpr int kNumTables = 3;

// Interpolation table over [lo, hi] with 256 fp16 entries. Below lo the
// function value saturates to `below`; above hi to `above` (Identity means
// return x itself, for silu/gelu tails).
struct TableDef {
  float lo, hi;
  enum class Edge : uint8_t { Zero, One, Identity } below, above;
};

TableDef table_def(Table t);

// Entries are the target function sampled at the 256 knots, computed in
// double and rounded once to fp16. Stable across platforms.
std::array<f16, kEntries> build_table(Table t);

// All tables concatenated in Table order: the exact bytes placed at the DDR
// LUT region base (512 bytes per table).
std::vector<uint8_t> lut_region_bytes();
inline constexpr uint32_t kTableBytes = kEntries * 2;

// Knot index/fraction selection is exact control logic; the interpolation
// y0 + (y1 - y0) * frac runs in fp16 with round-to-nearest-even per step.
f16 eval(Table t, const f16* entries, f16 x);

}  // namespace flight::lut
