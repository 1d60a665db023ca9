#include "flight/compression.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

namespace flight::compress {

static bool is_pow2(uint32_t v) { return v && !(v & (v - 1)); }

uint64_t nm_block_record_bytes(uint32_t n, uint32_t m) {
  uint64_t kpr = static_cast<uint64_t>(n) * 16 / m;  // kept per row
  return 1 + 16 * kpr + 16 * kpr / 2;
}

NMSparseTensor prune_nm(const std::vector<int8_t>& dense, uint32_t rows, uint32_t cols,
                        uint32_t n, uint32_t m) {
  if (!is_pow2(m) || m > 16) fail(ErrorKind::Config, "m must be a power of two <= 16");
  if (n != 0 && (m % n)) fail(ErrorKind::Config, "n must divide m");
  if (n > m) fail(ErrorKind::Config, "n exceeds m");
  if (rows % 16 || cols % 16 || rows == 0 || cols == 0)
    fail(ErrorKind::Config, "matrix dims must be multiples of 16");
  if (dense.size() != static_cast<size_t>(rows) * cols)
    fail(ErrorKind::Config, "dense size mismatch");

  NMSparseTensor t;
  t.rows = rows;
  t.cols = cols;
  t.m = m;
  t.per_block_n.assign(static_cast<size_t>(rows / 16) * (cols / 16),
                       static_cast<uint8_t>(n));
  if (n == 0) return t;

  const uint32_t groups_per_row = 16 / m;  // inside one block row
  t.values.reserve(static_cast<size_t>(rows) * cols * n / m);
  t.indices.reserve(t.values.capacity());

  for (uint32_t br = 0; br < rows / 16; br++) {
    for (uint32_t bc = 0; bc < cols / 16; bc++) {
      for (uint32_t r = 0; r < 16; r++) {
        const int8_t* row = dense.data() + static_cast<size_t>(br * 16 + r) * cols + bc * 16;
        for (uint32_t gr = 0; gr < groups_per_row; gr++) {
          const int8_t* grp = row + gr * m;
          // select n largest |v|, ties toward the lower index
          std::array<uint8_t, 16> order;
          for (uint32_t i = 0; i < m; i++) order[i] = static_cast<uint8_t>(i);
          std::stable_sort(order.begin(), order.begin() + m, [&](uint8_t a, uint8_t b) {
            return std::abs(static_cast<int>(grp[a])) > std::abs(static_cast<int>(grp[b]));
          });
          std::array<uint8_t, 16> keep;
          std::copy(order.begin(), order.begin() + n, keep.begin());
          std::sort(keep.begin(), keep.begin() + n);  // strictly increasing positions
          for (uint32_t i = 0; i < n; i++) {
            t.values.push_back(grp[keep[i]]);
            t.indices.push_back(keep[i]);
          }
        }
      }
    }
  }
  return t;
}

std::vector<int8_t> densify(const NMSparseTensor& t) {
  std::vector<int8_t> out(static_cast<size_t>(t.rows) * t.cols, 0);
  size_t cursor = 0;
  const uint32_t groups_per_row = 16 / t.m;
  for (uint32_t br = 0; br < t.block_rows(); br++) {
    for (uint32_t bc = 0; bc < t.block_cols(); bc++) {
      uint32_t n = t.block_n(br, bc);
      if (!n) continue;
      for (uint32_t r = 0; r < 16; r++) {
        int8_t* row = out.data() + static_cast<size_t>(br * 16 + r) * t.cols + bc * 16;
        for (uint32_t gr = 0; gr < groups_per_row; gr++)
          for (uint32_t i = 0; i < n; i++) {
            row[gr * t.m + t.indices.at(cursor)] = t.values.at(cursor);
            cursor++;
          }
      }
    }
  }
  return out;
}

std::vector<uint8_t> nm_stream(const NMSparseTensor& t) {
  std::vector<uint8_t> out;
  out.reserve(t.values.size() * 2);
  size_t cursor = 0;
  for (uint32_t br = 0; br < t.block_rows(); br++) {
    for (uint32_t bc = 0; bc < t.block_cols(); bc++) {
      uint32_t n = t.block_n(br, bc);
      out.push_back(static_cast<uint8_t>(n));
      uint64_t kpr = static_cast<uint64_t>(n) * 16 / t.m;
      uint64_t kept = 16 * kpr;
      for (uint64_t i = 0; i < kept; i++)
        out.push_back(static_cast<uint8_t>(t.values.at(cursor + i)));
      for (uint64_t i = 0; i < kept; i += 2) {
        uint8_t lo = t.indices.at(cursor + i) & 0xF;
        uint8_t hi = (i + 1 < kept) ? (t.indices.at(cursor + i + 1) & 0xF) : 0;
        out.push_back(static_cast<uint8_t>(lo | (hi << 4)));
      }
      cursor += kept;
    }
  }
  return out;
}

NMSparseTensor nm_from_stream(const uint8_t* data, size_t size, uint32_t rows, uint32_t cols,
                              uint32_t m, f16 scale) {
  NMSparseTensor t;
  t.rows = rows;
  t.cols = cols;
  t.m = m;
  t.scale = scale;
  size_t pos = 0;
  for (uint32_t b = 0; b < (rows / 16) * (cols / 16); b++) {
    if (pos >= size) fail(ErrorKind::Format, "nm stream truncated");
    uint32_t n = data[pos++];
    if (n > m || (n && m % n)) fail(ErrorKind::Format, "nm stream bad block n");
    t.per_block_n.push_back(static_cast<uint8_t>(n));
    uint64_t kept = static_cast<uint64_t>(n) * 16 / m * 16;
    if (pos + kept + kept / 2 > size) fail(ErrorKind::Format, "nm stream truncated");
    for (uint64_t i = 0; i < kept; i++)
      t.values.push_back(static_cast<int8_t>(data[pos + i]));
    pos += kept;
    for (uint64_t i = 0; i < kept; i += 2) {
      t.indices.push_back(data[pos] & 0xF);
      if (i + 1 < kept) t.indices.push_back(data[pos] >> 4);
      pos++;
    }
  }
  if (pos != size) fail(ErrorKind::Format, "nm stream trailing bytes");
  return t;
}

uint64_t nm_stream_bytes(const NMSparseTensor& t) {
  uint64_t total = 0;
  for (uint8_t n : t.per_block_n) total += nm_block_record_bytes(n, t.m);
  return total;
}

// ------------------------------------------------------------- masks ----

bool attends(const MaskSpec& spec, uint64_t i, uint64_t j) {
  if (j > i) return false;  // causal for every kind
  switch (spec.kind) {
    case MaskKind::DenseCausal:
      return true;
    case MaskKind::LocalWindow:
      return j / spec.window == i / spec.window;
    case MaskKind::LocalPlusGlobal:
      return j / spec.window == i / spec.window || j < spec.global;
  }
  return false;
}

uint64_t BlockSparseMask::set_count() const {
  uint64_t c = 0;
  for (uint8_t b : bits) c += b;
  return c;
}

BlockSparseMask build_attention_mask(const MaskSpec& spec, uint32_t seq_len) {
  if (seq_len < 1) fail(ErrorKind::Config, "seq_len must be >= 1");
  if (spec.kind != MaskKind::DenseCausal) {
    if (spec.window == 0 || spec.window % 64)
      fail(ErrorKind::Config, "window must be a positive multiple of 64");
  }
  if (spec.kind == MaskKind::LocalPlusGlobal && spec.global % 64)
    fail(ErrorKind::Config, "global prefix must be a multiple of 64");

  BlockSparseMask mask;
  mask.spec = spec;
  mask.seq_len = seq_len;
  mask.grid_rows = (seq_len + 63) / 64;
  mask.grid_cols = mask.grid_rows;
  mask.bits.assign(static_cast<size_t>(mask.grid_rows) * mask.grid_cols, 0);
  mask.partial.assign(mask.bits.size(), 0);

  for (uint32_t bi = 0; bi < mask.grid_rows; bi++) {
    for (uint32_t bj = 0; bj <= bi; bj++) {  // above the diagonal nothing attends
      bool any = false, all = true;
      for (uint64_t i = bi * 64ull; i < std::min<uint64_t>((bi + 1) * 64ull, seq_len); i++) {
        for (uint64_t j = bj * 64ull; j < std::min<uint64_t>((bj + 1) * 64ull, seq_len); j++) {
          if (attends(spec, i, j))
            any = true;
          else
            all = false;
          if (any && !all) goto decided;
        }
      }
    decided:
      // tokens beyond seq_len inside an edge block never attend
      if ((bi + 1) * 64ull > seq_len || (bj + 1) * 64ull > seq_len) all = false;
      if (bi == bj) all = false;  // causal boundary crosses diagonal blocks
      mask.bits[bi * mask.grid_cols + bj] = any;
      mask.partial[bi * mask.grid_cols + bj] = any && !all;
    }
  }
  return mask;
}

// --------------------------------------------------------- packed -------

bool valid_bits(uint32_t b) { return b == 2 || b == 3 || b == 4 || b == 8; }

uint64_t PackedQuantTensor::payload_offset(uint64_t group) const {
  uint64_t off = 0;
  for (uint64_t g = 0; g < group; g++) off += (16ull * per_group_bits.at(g) + 7) / 8;
  return off;
}

std::vector<uint8_t> pack_group(const int8_t* q, uint32_t bits) {
  std::vector<uint8_t> out((16 * bits + 7) / 8, 0);
  for (uint32_t i = 0; i < kQuantGroup; i++) {
    uint32_t u = static_cast<uint32_t>(q[i]) & ((1u << bits) - 1);
    uint32_t bit = i * bits;
    for (uint32_t b = 0; b < bits; b++, bit++)
      if (u & (1u << b)) out[bit / 8] |= static_cast<uint8_t>(1u << (bit % 8));
  }
  return out;
}

void unpack_group(const uint8_t* bytes, size_t nbytes, uint32_t bits, int8_t* out) {
  if (nbytes < (16 * bits + 7) / 8) fail(ErrorKind::Format, "packed group truncated");
  for (uint32_t i = 0; i < kQuantGroup; i++) {
    uint32_t u = 0;
    uint32_t bit = i * bits;
    for (uint32_t b = 0; b < bits; b++, bit++)
      if (bytes[bit / 8] & (1u << (bit % 8))) u |= 1u << b;
    // sign extend from `bits`
    if (u & (1u << (bits - 1))) u |= ~((1u << bits) - 1);
    out[i] = static_cast<int8_t>(u);
  }
}

int8_t quantize_value(double v, double scale) {
  long long q = std::llround(v / scale);  // llround = half away from zero
  if (q > 127) q = 127;
  if (q < -127) q = -127;
  return static_cast<int8_t>(q);
}

PackedQuantTensor quantize_mixed(const std::vector<f16>& dense, uint32_t rows, uint32_t cols,
                                 const std::vector<uint8_t>& bit_plan) {
  if (cols % kQuantGroup) fail(ErrorKind::Config, "cols must be a multiple of 16");
  if (dense.size() != static_cast<size_t>(rows) * cols)
    fail(ErrorKind::Config, "dense size mismatch");
  uint64_t groups = static_cast<uint64_t>(rows) * (cols / kQuantGroup);
  if (bit_plan.size() != groups) fail(ErrorKind::Config, "bit plan size mismatch");

  PackedQuantTensor t;
  t.rows = rows;
  t.cols = cols;
  t.per_group_bits = bit_plan;
  t.per_group_scale.reserve(groups);

  uint64_t g = 0;
  for (uint32_t r = 0; r < rows; r++) {
    for (uint32_t c = 0; c < cols; c += kQuantGroup, g++) {
      uint32_t bits = bit_plan[g];
      if (!valid_bits(bits)) fail(ErrorKind::Config, "bits must be one of {2,3,4,8}");
      float maxabs = 0.f;
      for (uint32_t i = 0; i < kQuantGroup; i++) {
        float v = dense[static_cast<size_t>(r) * cols + c + i].to_float();
        if (!std::isfinite(v)) fail(ErrorKind::Data, "non-finite weight value");
        maxabs = std::max(maxabs, std::fabs(v));
      }
      int32_t qmax = (1 << (bits - 1)) - 1;
      f16 scale = maxabs == 0.f ? f16::from_float(1.f)
                                : f16::from_float(maxabs / static_cast<float>(qmax));
      t.per_group_scale.push_back(scale);
      double s = scale.to_float();
      int8_t q[kQuantGroup];
      for (uint32_t i = 0; i < kQuantGroup; i++) {
        double v = dense[static_cast<size_t>(r) * cols + c + i].to_float();
        long long qq = std::llround(v / s);
        if (qq > qmax) qq = qmax;
        if (qq < -qmax) qq = -qmax;
        q[i] = static_cast<int8_t>(qq);
      }
      auto bytes = pack_group(q, bits);
      t.payload.insert(t.payload.end(), bytes.begin(), bytes.end());
    }
  }
  return t;
}

std::pair<std::array<int8_t, kQuantGroup>, f16> dequantize_group(const PackedQuantTensor& t,
                                                                 uint64_t group_idx) {
  if (group_idx >= t.group_count()) fail(ErrorKind::Format, "group index out of range");
  uint32_t bits = t.per_group_bits.at(group_idx);
  uint64_t off = t.payload_offset(group_idx);
  uint64_t len = (16ull * bits + 7) / 8;
  if (off + len > t.payload.size()) fail(ErrorKind::Format, "corrupt packed payload length");
  std::array<int8_t, kQuantGroup> lanes;
  unpack_group(t.payload.data() + off, len, bits, lanes.data());
  return {lanes, t.per_group_scale.at(group_idx)};
}

std::vector<f16> dequantize_all(const PackedQuantTensor& t) {
  std::vector<f16> out(static_cast<size_t>(t.rows) * t.cols);
  for (uint64_t g = 0; g < t.group_count(); g++) {
    auto [lanes, scale] = dequantize_group(t, g);
    float s = scale.to_float();
    uint64_t base = g * kQuantGroup;
    for (uint32_t i = 0; i < kQuantGroup; i++)
      out[base + i] = f16::from_float(static_cast<float>(lanes[i]) * s);
  }
  return out;
}

std::vector<uint8_t> packed_stream(const PackedQuantTensor& t) {
  std::vector<uint8_t> out;
  out.reserve(t.payload.size() + t.group_count() * 3);
  uint64_t off = 0;
  for (uint64_t g = 0; g < t.group_count(); g++) {
    uint32_t bits = t.per_group_bits.at(g);
    out.push_back(static_cast<uint8_t>(bits));
    uint16_t sb = t.per_group_scale.at(g).bits;
    out.push_back(static_cast<uint8_t>(sb & 0xFF));
    out.push_back(static_cast<uint8_t>(sb >> 8));
    uint64_t len = (16ull * bits + 7) / 8;
    out.insert(out.end(), t.payload.begin() + off, t.payload.begin() + off + len);
    off += len;
  }
  return out;
}

PackedQuantTensor packed_from_stream(const uint8_t* data, size_t size, uint32_t rows,
                                     uint32_t cols) {
  PackedQuantTensor t;
  t.rows = rows;
  t.cols = cols;
  uint64_t groups = static_cast<uint64_t>(rows) * (cols / kQuantGroup);
  size_t pos = 0;
  for (uint64_t g = 0; g < groups; g++) {
    if (pos + 3 > size) fail(ErrorKind::Format, "packed stream truncated");
    uint32_t bits = data[pos];
    if (!valid_bits(bits)) fail(ErrorKind::Format, "packed stream bad bits");
    uint16_t sb = static_cast<uint16_t>(data[pos + 1] | (data[pos + 2] << 8));
    pos += 3;
    uint64_t len = (16ull * bits + 7) / 8;
    if (pos + len > size) fail(ErrorKind::Format, "packed stream truncated");
    t.per_group_bits.push_back(static_cast<uint8_t>(bits));
    t.per_group_scale.push_back(f16::from_bits(sb));
    t.payload.insert(t.payload.end(), data + pos, data + pos + len);
    pos += len;
  }
  if (pos != size) fail(ErrorKind::Format, "packed stream trailing bytes");
  return t;
}

uint64_t packed_stream_bytes(const PackedQuantTensor& t) {
  uint64_t total = 0;
  for (uint8_t b : t.per_group_bits) total += 3 + (16ull * b + 7) / 8;
  return total;
}

double average_plan_bits(const std::vector<uint8_t>& bit_plan) {
  if (bit_plan.empty()) return 0.0;
  uint64_t sum = 0;
  for (uint8_t b : bit_plan) sum += b;
  return static_cast<double>(sum) / static_cast<double>(bit_plan.size());
}

std::vector<uint8_t> expand_bit_plan(const std::vector<uint8_t>& pattern, uint64_t groups) {
  if (pattern.empty()) fail(ErrorKind::Config, "empty bit pattern");
  std::vector<uint8_t> plan(groups);
  for (uint64_t g = 0; g < groups; g++) plan[g] = pattern[g % pattern.size()];
  return plan;
}

std::pair<std::vector<int8_t>, f16> quantize_symmetric_int8(const std::vector<f16>& dense) {
  float maxabs = 0.f;
  for (f16 v : dense) {
    float f = v.to_float();
    if (!std::isfinite(f)) fail(ErrorKind::Data, "non-finite weight value");
    maxabs = std::max(maxabs, std::fabs(f));
  }
  f16 scale = maxabs == 0.f ? f16::from_float(1.f) : f16::from_float(maxabs / 127.f);
  double s = scale.to_float();
  std::vector<int8_t> q(dense.size());
  for (size_t i = 0; i < dense.size(); i++) q[i] = quantize_value(dense[i].to_float(), s);
  return {std::move(q), scale};
}

}  // namespace flight::compress
