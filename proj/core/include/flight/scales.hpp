#pragma once

#include <cmath>
#include <cstdint>

namespace flight::scales {

// Activation quantization contract. Every int8 activation tensor carries a
// power-of-two scale 2^exp chosen at compile time from worst-case magnitude
// bounds, so requantization never saturates on in-range data and the
// compiler, executor and reference oracle all agree bit-for-bit.

inline constexpr int kEmbeddingExp = -6;   // prompt embeddings: q * 2^-6
inline constexpr int kProbExp = -7;        // softmax probabilities

// smallest e with 127 * 2^e >= bound
inline int exp_for_bound(double bound) {
  if (bound <= 0) return kEmbeddingExp;
  return static_cast<int>(std::ceil(std::log2(bound / 127.0)));
}

// |x| <= 127 * 2^exp for an int8 tensor
inline double bound_of(int exp) { return 127.0 * std::exp2(exp); }

// LayerNorm output: |(x - mean)/std| < sqrt(K) elementwise.
inline int layernorm_exp(uint32_t width) {
  return exp_for_bound(std::sqrt(static_cast<double>(width)));
}

// Linear accumulation: K_kept * 127 * w_scale * in_bound.
inline int linear_exp(uint32_t k, double density, double w_scale_max, int in_exp) {
  double bound = static_cast<double>(k) * density * 127.0 * w_scale_max * bound_of(in_exp);
  return exp_for_bound(bound);
}

// S*V row: softmax weights sum to one, rounding inflation bounded by 2x.
inline int attention_out_exp(double v_scale_pow2_exp) {
  return exp_for_bound(2.0 * 127.0 * std::exp2(v_scale_pow2_exp));
}

inline int eltwise_add_exp(int a, int b) {
  return exp_for_bound(bound_of(a) + bound_of(b));
}

inline int eltwise_mul_exp(int a, int b) {
  return exp_for_bound(bound_of(a) * bound_of(b));
}

// silu/gelu/relu never grow the magnitude bound past max(|x|, 1).
inline int activation_exp(int in_exp) {
  double b = bound_of(in_exp);
  return exp_for_bound(b < 1.0 ? 1.0 : b);
}

}  // namespace flight::scales
