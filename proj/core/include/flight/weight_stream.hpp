#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flight/compression.hpp"
#include "flight/container.hpp"
#include "flight/fp16.hpp"
#include "flight/isa.hpp"

namespace flight::stream {

// Per-SLR weight streams. Each weight tensor is split along its output rows
// into equal per-SLR slices (padded so every SLR runs the same instruction
// sequence), then each slice is re-tiled into (n-strip, k-chunk) tiles sized
// to half the weight buffer. A tile is one contiguous run of 256-byte rows,
// padded to a multiple of 8 rows so one broadcast LD covers it.

// Lightweight description of a tensor's compression, enough to compute all
// stream sizes without payload data (the analytic size report depends on
// this).
struct TensorCodec {
  compress::TensorKind kind = compress::TensorKind::Nm;
  uint32_t nm_n = 8, nm_m = 16;
  std::vector<uint8_t> bit_pattern;  // packed, cycled per group

  uint8_t bits_of_group(uint64_t flat_group) const {
    return bit_pattern.empty() ? 4 : bit_pattern[flat_group % bit_pattern.size()];
  }
};

struct Tile {
  uint32_t n0 = 0, n_count = 0;
  uint32_t k0 = 0, k_count = 0;
  uint32_t row_offset = 0;  // rows from the stream start (8-aligned)
  uint32_t rows = 0;        // padded row count of this tile
  uint64_t bytes = 0;       // payload bytes inside the tile
};

struct StreamLayout {
  uint32_t slr_rows_n = 0;  // per-SLR output rows (padded slice width)
  uint32_t cols = 0;
  std::vector<Tile> tiles;  // n-strip major, k-chunk minor
  uint32_t total_rows = 0;  // 256-byte rows per SLR
  uint32_t n_strips = 0, k_chunks = 0;
};

// Tile payload size for a slice of the tensor.
uint64_t tile_payload_bytes(const TensorCodec& codec, uint32_t cols, uint32_t n0,
                            uint32_t n_count, uint32_t k0, uint32_t k_count);

// Choose n-strips / k-chunks. n_strip_hint forces strip width (head-aligned
// QKV); otherwise strips are multiples of 256 rows capped by the partial
// budget, and k-chunks are multiples of 64 sized to tile_budget_bytes.
StreamLayout plan_stream(const TensorCodec& codec, uint32_t slr_rows_n, uint32_t cols,
                         uint64_t tile_budget_bytes, uint64_t partial_budget_bytes,
                         uint32_t max_m_rows, uint32_t n_strip_hint = 0);

// Loader side: materialize one SLR's stream bytes from the container tensor.
// Rows of the slice beyond the dense tensor encode zeros.
std::vector<uint8_t> build_stream(const compress::ContainerEntry& entry,
                                  const StreamLayout& layout, uint32_t slr,
                                  const TensorCodec& codec);

TensorCodec codec_of(const compress::ContainerEntry& entry);

}  // namespace flight::stream
