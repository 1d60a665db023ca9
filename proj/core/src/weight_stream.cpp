#include "flight/weight_stream.hpp"

#include <algorithm>

namespace flight::stream {

using compress::TensorKind;

namespace {

uint64_t packed_row_bytes(const TensorCodec& codec, uint32_t k0, uint32_t k_count) {
  uint64_t total = 0;
  for (uint32_t g = k0 / 16; g < (k0 + k_count) / 16; g++)
    total += 3 + (16ull * codec.bits_of_group(g) + 7) / 8;
  return total;
}

}  // namespace

uint64_t tile_payload_bytes(const TensorCodec& codec, uint32_t cols, uint32_t n0,
                            uint32_t n_count, uint32_t k0, uint32_t k_count) {
  (void)cols;
  (void)n0;
  switch (codec.kind) {
    case TensorKind::Nm: {
      uint64_t blocks = (static_cast<uint64_t>(n_count) / 16) * (k_count / 16);
      return blocks * compress::nm_block_record_bytes(codec.nm_n, codec.nm_m);
    }
    case TensorKind::Packed:
      return static_cast<uint64_t>(n_count) * packed_row_bytes(codec, k0, k_count);
    case TensorKind::Mask:
      break;
  }
  fail(ErrorKind::Compile, "mask tensors have no weight stream");
}

StreamLayout plan_stream(const TensorCodec& codec, uint32_t slr_rows_n, uint32_t cols,
                         uint64_t tile_budget_bytes, uint64_t partial_budget_bytes,
                         uint32_t max_m_rows, uint32_t n_strip_hint) {
  if (slr_rows_n % 16 || cols % 16) fail(ErrorKind::Compile, "stream dims not 16-aligned");
  StreamLayout layout;
  layout.slr_rows_n = slr_rows_n;
  layout.cols = cols;

  // strip width: forced by hint, else whole slice when the partial buffer
  // allows, else the largest multiple of 256 that fits
  uint32_t strip = n_strip_hint;
  if (!strip) {
    uint64_t n_max = partial_budget_bytes / (8ull * max_m_rows);
    if (slr_rows_n <= n_max) {
      strip = slr_rows_n;
    } else {
      strip = static_cast<uint32_t>(n_max & ~255ull);
      if (strip == 0) fail(ErrorKind::Tiling, "partial buffer too small for any strip");
    }
  }
  if (strip > slr_rows_n) strip = slr_rows_n;

  uint32_t row_cursor = 0;
  for (uint32_t n0 = 0; n0 < slr_rows_n; n0 += strip) {
    uint32_t nc = std::min(strip, slr_rows_n - n0);
    layout.n_strips++;
    uint32_t chunks_here = 0;
    uint32_t k0 = 0;
    while (k0 < cols) {
      uint32_t kc = 0;
      uint64_t bytes = 0;
      while (k0 + kc < cols) {
        uint32_t step = std::min<uint32_t>(64, cols - (k0 + kc));
        uint64_t nb = tile_payload_bytes(codec, cols, n0, nc, k0 + kc, step);
        if (kc && bytes + nb > tile_budget_bytes) break;
        bytes += nb;
        kc += step;
        if (bytes > tile_budget_bytes) break;
      }
      if (bytes > tile_budget_bytes && kc <= 64) {
        // a single minimum chunk exceeding the budget cannot be loaded
        if (nc <= 16) fail(ErrorKind::Tiling, "weight tile exceeds the weight buffer");
        // retry the whole layout with narrower strips
        uint32_t narrower = nc / 2 < 16 ? 16 : (nc / 2) & ~15u;
        return plan_stream(codec, slr_rows_n, cols, tile_budget_bytes, partial_budget_bytes,
                           max_m_rows, narrower);
      }
      if (k0 / 64 > 255) fail(ErrorKind::Tiling, "k offset exceeds the 64-granular field");
      Tile t;
      t.n0 = n0;
      t.n_count = nc;
      t.k0 = k0;
      t.k_count = kc;
      t.bytes = bytes;
      t.row_offset = row_cursor;
      t.rows = static_cast<uint32_t>((((bytes + 255) / 256 + 7) / 8) * 8);
      row_cursor += t.rows;
      layout.tiles.push_back(t);
      k0 += kc;
      chunks_here++;
    }
    layout.k_chunks = std::max(layout.k_chunks, chunks_here);
  }
  layout.total_rows = row_cursor;
  return layout;
}

TensorCodec codec_of(const compress::ContainerEntry& entry) {
  TensorCodec codec;
  codec.kind = entry.kind;
  if (entry.kind == TensorKind::Nm) {
    const auto& t = entry.nm();
    codec.nm_m = t.m;
    codec.nm_n = t.per_block_n.empty() ? 0 : t.per_block_n[0];
    for (uint8_t n : t.per_block_n)
      if (n != codec.nm_n)
        fail(ErrorKind::Compile, "per-block N must be uniform per tensor: " + entry.name);
  } else if (entry.kind == TensorKind::Packed) {
    const auto& t = entry.packed();
    uint32_t gpr = t.groups_per_row();
    codec.bit_pattern.assign(t.per_group_bits.begin(), t.per_group_bits.begin() + gpr);
    for (uint32_t r = 1; r < t.rows; r++)
      for (uint32_t g = 0; g < gpr; g++)
        if (t.per_group_bits[static_cast<size_t>(r) * gpr + g] != codec.bit_pattern[g])
          fail(ErrorKind::Compile, "bit plan must repeat per row: " + entry.name);
  }
  return codec;
}

namespace {

// per-block (values, indices) offsets into an NMSparseTensor's arrays
std::vector<uint64_t> nm_block_offsets(const compress::NMSparseTensor& t) {
  std::vector<uint64_t> off(t.per_block_n.size() + 1, 0);
  for (size_t b = 0; b < t.per_block_n.size(); b++)
    off[b + 1] = off[b] + static_cast<uint64_t>(t.per_block_n[b]) * 16 / t.m * 16;
  return off;
}

void append_nm_block(std::vector<uint8_t>& out, const compress::NMSparseTensor& t,
                     const std::vector<uint64_t>& offsets, uint32_t br, uint32_t bc) {
  uint32_t n = t.block_n(br, bc);
  out.push_back(static_cast<uint8_t>(n));
  uint64_t kept = static_cast<uint64_t>(n) * 16 / t.m * 16;
  uint64_t base = offsets[static_cast<size_t>(br) * t.block_cols() + bc];
  for (uint64_t i = 0; i < kept; i++)
    out.push_back(static_cast<uint8_t>(t.values[base + i]));
  for (uint64_t i = 0; i < kept; i += 2) {
    uint8_t lo = t.indices[base + i] & 0xF;
    uint8_t hi = (i + 1 < kept) ? (t.indices[base + i + 1] & 0xF) : 0;
    out.push_back(static_cast<uint8_t>(lo | (hi << 4)));
  }
}

void append_pad_nm_block(std::vector<uint8_t>& out, uint32_t n, uint32_t m) {
  out.push_back(static_cast<uint8_t>(n));
  uint64_t kept = static_cast<uint64_t>(n) * 16 / m * 16;
  out.insert(out.end(), kept, 0);  // zero values
  // strictly increasing index pattern 0..n-1 per group, packed as nibbles
  std::vector<uint8_t> idx;
  idx.reserve(kept);
  for (uint32_t row = 0; row < 16; row++)
    for (uint32_t g = 0; g < 16 / m; g++)
      for (uint32_t i = 0; i < n; i++) idx.push_back(static_cast<uint8_t>(i));
  for (uint64_t i = 0; i < kept; i += 2) {
    uint8_t lo = idx[i] & 0xF;
    uint8_t hi = (i + 1 < kept) ? (idx[i + 1] & 0xF) : 0;
    out.push_back(static_cast<uint8_t>(lo | (hi << 4)));
  }
}

void append_packed_group(std::vector<uint8_t>& out, const compress::PackedQuantTensor& t,
                         uint64_t flat_group) {
  uint32_t bits = t.per_group_bits.at(flat_group);
  out.push_back(static_cast<uint8_t>(bits));
  uint16_t sb = t.per_group_scale.at(flat_group).bits;
  out.push_back(static_cast<uint8_t>(sb & 0xFF));
  out.push_back(static_cast<uint8_t>(sb >> 8));
  uint64_t off = t.payload_offset(flat_group);
  uint64_t len = (16ull * bits + 7) / 8;
  out.insert(out.end(), t.payload.begin() + off, t.payload.begin() + off + len);
}

void append_pad_packed_group(std::vector<uint8_t>& out, uint32_t bits) {
  out.push_back(static_cast<uint8_t>(bits));
  uint16_t one = f16::from_float(1.f).bits;
  out.push_back(static_cast<uint8_t>(one & 0xFF));
  out.push_back(static_cast<uint8_t>(one >> 8));
  out.insert(out.end(), (16ull * bits + 7) / 8, 0);
}

}  // namespace

std::vector<uint8_t> build_stream(const compress::ContainerEntry& entry,
                                  const StreamLayout& layout, uint32_t slr,
                                  const TensorCodec& codec) {
  std::vector<uint8_t> out(static_cast<size_t>(layout.total_rows) * isa::kRowBytes, 0);
  uint32_t slice_base = slr * layout.slr_rows_n;  // dense row of slice row 0

  std::vector<uint64_t> nm_offsets;
  if (codec.kind == TensorKind::Nm) nm_offsets = nm_block_offsets(entry.nm());

  for (const Tile& t : layout.tiles) {
    std::vector<uint8_t> bytes;
    bytes.reserve(t.bytes);
    if (codec.kind == TensorKind::Nm) {
      const auto& nm = entry.nm();
      for (uint32_t nb = t.n0 / 16; nb < (t.n0 + t.n_count) / 16; nb++) {
        uint32_t dense_block_row = (slice_base + nb * 16) / 16;
        for (uint32_t kb = t.k0 / 16; kb < (t.k0 + t.k_count) / 16; kb++) {
          if (dense_block_row < nm.block_rows())
            append_nm_block(bytes, nm, nm_offsets, dense_block_row, kb);
          else
            append_pad_nm_block(bytes, codec.nm_n, codec.nm_m);
        }
      }
    } else {
      const auto& pk = entry.packed();
      uint32_t gpr = pk.groups_per_row();
      for (uint32_t r = 0; r < t.n_count; r++) {
        uint32_t dense_row = slice_base + t.n0 + r;
        for (uint32_t g = t.k0 / 16; g < (t.k0 + t.k_count) / 16; g++) {
          if (dense_row < pk.rows)
            append_packed_group(bytes, pk, static_cast<uint64_t>(dense_row) * gpr + g);
          else
            append_pad_packed_group(bytes, codec.bits_of_group(g));
        }
      }
    }
    if (bytes.size() != t.bytes) fail(ErrorKind::Compile, "stream size mismatch vs plan");
    std::copy(bytes.begin(), bytes.end(),
              out.begin() + static_cast<size_t>(t.row_offset) * isa::kRowBytes);
  }
  return out;
}

}  // namespace flight::stream
