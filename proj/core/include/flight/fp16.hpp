#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

namespace flight {

// IEEE binary16 value type. Storage is the raw bit pattern; every arithmetic
// helper promotes to binary32, computes one operation, and rounds back.
// Since binary32 carries 2p+2 bits relative to binary16, the double rounding
// through float is exact for +, -, *, / and sqrt.
struct f16 {
  uint16_t bits = 0;

  f16() = default;
  static f16 from_bits(uint16_t b) {
    f16 h;
    h.bits = b;
    return h;
  }

  static f16 from_float(float f);
  float to_float() const;
  static f16 from_double(double d) { return from_float(static_cast<float>(d)); }

  bool operator==(const f16& o) const { return bits == o.bits; }
  bool operator!=(const f16& o) const { return bits != o.bits; }
};

inline uint32_t f32_bits(float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  return u;
}

inline float f32_from_bits(uint32_t u) {
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

// Round-to-nearest-even float -> half conversion.
inline f16 f16::from_float(float f) {
  uint32_t x = f32_bits(f);
  uint32_t sign = (x >> 16) & 0x8000u;
  int32_t exp = static_cast<int32_t>((x >> 23) & 0xFF) - 127;
  uint32_t mant = x & 0x7FFFFFu;

  if (exp == 128) {  // inf / nan
    uint16_t payload = mant ? static_cast<uint16_t>(0x0200u | (mant >> 13)) : 0u;
    return from_bits(static_cast<uint16_t>(sign | 0x7C00u | payload));
  }
  if (exp > 15) {  // overflow -> inf
    return from_bits(static_cast<uint16_t>(sign | 0x7C00u));
  }
  if (exp >= -14) {  // normal half
    uint32_t m = mant;
    uint32_t half = ((exp + 15) << 10) | (m >> 13);
    uint32_t rem = m & 0x1FFFu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) half++;  // RNE
    return from_bits(static_cast<uint16_t>(sign | half));  // carry may bump exp; format stays valid
  }
  if (exp >= -24) {  // subnormal half
    uint32_t m = mant | 0x800000u;  // implicit bit
    int shift = -exp - 14 + 13;     // 14..24 -> 13+..
    uint32_t half = m >> (shift + 1);
    uint32_t rem = m & ((2u << shift) - 1u);
    uint32_t mid = 1u << shift;
    if (rem > mid || (rem == mid && (half & 1u))) half++;
    return from_bits(static_cast<uint16_t>(sign | half));
  }
  return from_bits(static_cast<uint16_t>(sign));  // underflow -> signed zero
}

inline float f16::to_float() const {
  uint32_t sign = (bits & 0x8000u) << 16;
  uint32_t exp = (bits >> 10) & 0x1F;
  uint32_t mant = bits & 0x3FFu;
  if (exp == 0x1F) return f32_from_bits(sign | 0x7F800000u | (mant << 13));
  if (exp == 0) {
    if (mant == 0) return f32_from_bits(sign);
    // normalize subnormal
    int shift = 0;
    while (!(mant & 0x400u)) {
      mant <<= 1;
      shift++;
    }
    mant &= 0x3FFu;
    return f32_from_bits(sign | ((127 - 15 - shift + 1) << 23) | (mant << 13));
  }
  return f32_from_bits(sign | ((exp - 15 + 127) << 23) | (mant << 13));
}

// Saturating conversion used for activation staging: out-of-range finite
// values clamp to +-65504 instead of overflowing to infinity.
inline f16 f16_saturate(double d) {
  if (std::isnan(d)) return f16::from_bits(0x7E00u);
  if (d > 65504.0) return f16::from_bits(0x7BFFu);
  if (d < -65504.0) return f16::from_bits(0xFBFFu);
  return f16::from_double(d);
}

inline f16 f16_add(f16 a, f16 b) { return f16::from_float(a.to_float() + b.to_float()); }
inline f16 f16_sub(f16 a, f16 b) { return f16::from_float(a.to_float() - b.to_float()); }
inline f16 f16_mul(f16 a, f16 b) { return f16::from_float(a.to_float() * b.to_float()); }
inline f16 f16_div(f16 a, f16 b) { return f16::from_float(a.to_float() / b.to_float()); }
inline f16 f16_sqrt(f16 a) { return f16::from_float(std::sqrt(a.to_float())); }
inline f16 f16_max(f16 a, f16 b) { return a.to_float() >= b.to_float() ? a : b; }

inline bool f16_isnan(f16 a) {
  return ((a.bits & 0x7C00u) == 0x7C00u) && (a.bits & 0x3FFu);
}

// Distance in representable steps, for "within N ulp" test assertions.
inline int64_t f16_ulp_distance(f16 a, f16 b) {
  if (f16_isnan(a) || f16_isnan(b)) return INT64_MAX;
  auto ordered = [](uint16_t u) -> int32_t {
    return (u & 0x8000u) ? 0x8000 - static_cast<int32_t>(u & 0x7FFFu)
                         : 0x8000 + static_cast<int32_t>(u & 0x7FFFu);
  };
  int64_t d = ordered(a.bits) - ordered(b.bits);
  return d < 0 ? -d : d;
}

}  // namespace flight
