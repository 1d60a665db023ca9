#include "flight/sfu_math.hpp"

#include <cmath>

#include "flight/error.hpp"

namespace flight::sfu {

Tables Tables::generate() {
  Tables t;
  t.exp = lut::build_table(lut::Table::Exp);
  t.silu = lut::build_table(lut::Table::Silu);
  t.gelu = lut::build_table(lut::Table::Gelu);
  return t;
}

int8_t requant(f16 v, int scale_exp) {
  double d = std::ldexp(static_cast<double>(v.to_float()), -scale_exp);
  if (std::isnan(d)) return 0;
  long long q = std::llround(d);
  if (q > 127) q = 127;
  if (q < -127) q = -127;
  return static_cast<int8_t>(q);
}

std::vector<f16> softmax(const std::vector<f16>& x, const std::vector<f16>& mask,
                         const Tables& t) {
  if (!mask.empty() && mask.size() != x.size())
    fail(ErrorKind::Fault, "softmax mask length mismatch");
  size_t n = x.size();
  std::vector<f16> masked(n);
  bool has_nan = false;
  for (size_t i = 0; i < n; i++) {
    masked[i] = mask.empty() ? x[i] : f16_add(x[i], mask[i]);
    has_nan |= f16_isnan(masked[i]);
  }

  std::vector<f16> out(n, f16::from_float(0.f));
  if (n == 0) return out;
  if (has_nan) {
    for (size_t i = 0; i < n; i++) out[i] = f16::from_bits(0x7E00u);
    return out;
  }

  // phase 1: max reduction
  f16 mx = masked[0];
  for (size_t i = 1; i < n; i++) mx = f16_max(mx, masked[i]);

  // phase 2: exponentiate and sum in index order
  std::vector<f16> e(n);
  f16 sum = f16::from_float(0.f);
  for (size_t i = 0; i < n; i++) {
    float mf = masked[i].to_float();
    f16 d = std::isinf(mf) && mf < 0 ? masked[i] : f16_sub(masked[i], mx);
    e[i] = lut::eval(lut::Table::Exp, t.exp.data(), d);
    sum = f16_add(sum, e[i]);
  }
  if (sum.to_float() == 0.f) return out;
  for (size_t i = 0; i < n; i++) out[i] = f16_div(e[i], sum);
  return out;
}

std::vector<f16> layernorm(const std::vector<f16>& x) {
  size_t n = x.size();
  std::vector<f16> out(n, f16::from_float(0.f));
  if (n == 0) return out;
  const f16 count = f16::from_float(static_cast<float>(n));
  const f16 eps = f16::from_float(1e-5f);

  f16 sum = f16::from_float(0.f);
  for (size_t i = 0; i < n; i++) sum = f16_add(sum, x[i]);
  f16 mean = f16_div(sum, count);

  f16 varsum = f16::from_float(0.f);
  for (size_t i = 0; i < n; i++) {
    f16 d = f16_sub(x[i], mean);
    varsum = f16_add(varsum, f16_mul(d, d));
  }
  f16 var = f16_div(varsum, count);
  f16 denom = f16_sqrt(f16_add(var, eps));
  for (size_t i = 0; i < n; i++) out[i] = f16_div(f16_sub(x[i], mean), denom);
  return out;
}

f16 silu(f16 x, const Tables& t) { return lut::eval(lut::Table::Silu, t.silu.data(), x); }
f16 gelu(f16 x, const Tables& t) { return lut::eval(lut::Table::Gelu, t.gelu.data(), x); }

}  // namespace flight::sfu
