#include "flight/lut.hpp"

#include <cmath>

namespace flight::lut {

TableDef table_def(Table t) {
  switch (t) {
    case Table::Exp:
      return {-16.f, 0.f, TableDef::Edge::Zero, TableDef::Edge::One};
    case Table::Silu:
      return {-8.f, 8.f, TableDef::Edge::Zero, TableDef::Edge::Identity};
    case Table::Gelu:
      return {-8.f, 8.f, TableDef::Edge::Zero, TableDef::Edge::Identity};
  }
  return {0.f, 1.f, TableDef::Edge::Zero, TableDef::Edge::Zero};
}

static double fn(Table t, double x) {
  switch (t) {
    case Table::Exp:
      return std::exp(x);
    case Table::Silu:
      return x / (1.0 + std::exp(-x));
    case Table::Gelu:
      return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  }
  return 0.0;
}

std::array<f16, kEntries> build_table(Table t) {
  TableDef def = table_def(t);
  std::array<f16, kEntries> out;
  for (uint32_t i = 0; i < kEntries; i++) {
    double x = def.lo + (static_cast<double>(def.hi) - def.lo) * i / (kEntries - 1);
    out[i] = f16::from_double(fn(t, x));
  }
  return out;
}

std::vector<uint8_t> lut_region_bytes() {
  std::vector<uint8_t> out;
  out.reserve(kNumTables * kTableBytes);
  for (int t = 0; t < kNumTables; t++) {
    auto table = build_table(static_cast<Table>(t));
    for (f16 v : table) {
      out.push_back(static_cast<uint8_t>(v.bits & 0xFF));
      out.push_back(static_cast<uint8_t>(v.bits >> 8));
    }
  }
  return out;
}

f16 eval(Table t, const f16* entries, f16 x) {
  if (f16_isnan(x)) return x;
  TableDef def = table_def(t);
  float xf = x.to_float();
  if (xf <= def.lo) {
    switch (def.below) {
      case TableDef::Edge::Zero: return f16::from_float(0.f);
      case TableDef::Edge::One: return f16::from_float(1.f);
      case TableDef::Edge::Identity: return x;
    }
  }
  if (xf >= def.hi) {
    switch (def.above) {
      case TableDef::Edge::Zero: return f16::from_float(0.f);
      case TableDef::Edge::One: return f16::from_float(1.f);
      case TableDef::Edge::Identity: return x;
    }
  }
  double step = (static_cast<double>(def.hi) - def.lo) / (kEntries - 1);
  double u = (static_cast<double>(xf) - def.lo) / step;
  uint32_t i = static_cast<uint32_t>(u);
  if (i >= kEntries - 1) i = kEntries - 2;
  f16 frac = f16::from_double(u - i);
  f16 y0 = entries[i], y1 = entries[i + 1];
  return f16_add(y0, f16_mul(f16_sub(y1, y0), frac));
}

}  // namespace flight::lut
