#pragma once

#include <cstdint>
#include <vector>

#include "flight/fp16.hpp"
#include "flight/lut.hpp"

namespace flight::sfu {

// SFU arithmetic contract: every primitive rounds to nearest-even fp16.
// Two-phase ops run their reduction over indices in ascending order, so the
// result sequence is pinned bit-for-bit.

struct Tables {
  std::array<f16, lut::kEntries> exp, silu, gelu;
  static Tables generate();
};

// Softmax over one row with an additive fp16 mask (0 = keep, large negative
// = drop). An all-masked row yields zeros, not NaN.
std::vector<f16> softmax(const std::vector<f16>& x, const std::vector<f16>& mask,
                         const Tables& t);

// Unaffine LayerNorm: (x - mean) / sqrt(var + eps), eps = fp16(1e-5).
std::vector<f16> layernorm(const std::vector<f16>& x);

f16 silu(f16 x, const Tables& t);
f16 gelu(f16 x, const Tables& t);
inline f16 add(f16 a, f16 b) { return f16_add(a, b); }
inline f16 mul(f16 a, f16 b) { return f16_mul(a, b); }

// int8 <-> fp16 lane helpers shared by the executor and the oracle.
// Power-of-two activation scales make the dequantization exact in fp16.
inline f16 dequant(int8_t q, int scale_exp) {
  return f16::from_float(std::ldexp(static_cast<float>(q), scale_exp));
}
int8_t requant(f16 v, int scale_exp);

inline constexpr int kProbScaleExp = -7;  // softmax probabilities: q * 2^-7

}  // namespace flight::sfu
