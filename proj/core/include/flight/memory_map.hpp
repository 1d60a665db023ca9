#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flight/container.hpp"
#include "flight/hw_config.hpp"
#include "flight/isa.hpp"
#include "flight/model_graph.hpp"
#include "flight/weight_stream.hpp"

namespace flight::mem {

inline uint32_t pad_to(uint32_t v, uint32_t unit) { return (v + unit - 1) / unit * unit; }
inline uint32_t bytes_to_rows(uint64_t bytes) {
  return static_cast<uint32_t>((bytes + isa::kRowBytes - 1) / isa::kRowBytes);
}

// Model-parallel split across SLRs. QKV projections split on head
// boundaries so attention stays core-local; plain outputs split into equal
// padded slices; under-filled tail slices compute zero-weight padding.
struct HeadSplit {
  uint32_t heads_per_slr = 0;
  uint32_t qkv_slice = 0;     // heads_per_slr * head_dim
  uint32_t d_slice = 0;       // pad16(ceil(D / cores))
  uint32_t f_slice = 0;       // pad16(ceil(F / cores))
  uint32_t kv_rows_per_token = 1;
};

HeadSplit head_split(const ir::ModelConfig& cfg, uint32_t cores);

// Compression facts the compiler needs, detached from payloads so analytic
// paths can run without materializing weights.
struct CompressionInfo {
  struct Entry {
    stream::TensorCodec codec;
    f16 nm_scale;               // per-tensor scale of nm weights
    double max_group_scale = 0;  // magnitude-bound input
  };
  std::map<std::string, Entry> tensors;
  compress::MaskSpec mask;

  static CompressionInfo from_container(const compress::Container& c, const ir::IRGraph& g);
  // default plan: every weight 8:16 int8 with a nominal unit-ish scale
  static CompressionInfo uniform_nm(const ir::IRGraph& g, uint32_t n = 8, uint32_t m = 16);

  const Entry& at(const std::string& name) const;
};

struct WeightPlacement {
  uint32_t region_row = 0;  // linear row inside the Weights region
  stream::StreamLayout layout;
};

struct SpillSlot {
  uint32_t row = 0;   // linear row inside its region
  uint32_t rows = 0;  // padded to 8
};

// KV rows live whole-entry-per-channel so the runtime append offset never
// changes an instruction's channel bit.
struct KvAddr {
  uint8_t channel = 0;   // channel within the core's 8-channel group
  uint32_t row = 0;      // channel-local row inside the KvCache region
};

struct MemoryMap {
  uint32_t num_slrs = 1;
  uint32_t max_len = 0;
  HeadSplit split;
  std::map<std::string, WeightPlacement> weights;
  std::map<std::string, SpillSlot> spill;  // "x_a", "x_b", "q", "attn"
  std::map<std::string, SpillSlot> io;     // "prompt", "decode_in", "out_i8", "out_f16",
                                           // "decode_out_i8", "decode_out_f16"

  // per-SLR region extents: channel-local rows for HBM regions, plain rows
  // for DDR regions
  std::array<uint32_t, isa::kNumRegions> region_rows{};
  std::vector<isa::BaseTable> bases;  // per SLR (channel-relative rows / DDR rows)

  uint32_t kv_rows_per_entry = 0;  // rows per (layer, side, local head)
  KvAddr kv_addr(uint32_t layer, uint32_t side, uint32_t head, uint32_t token) const;

  uint32_t mask_prefill_strip_rows = 0;  // rows per 64-query mask strip
  uint32_t params_row_budget = 0;

  // capacity accounting
  uint64_t hbm_rows_per_channel = 0;
  uint64_t ddr_rows = 0;
  uint64_t weight_stream_bytes = 0;  // padded per-SLR weight region bytes
};

// Region layout for a fused graph whose tensors are registered in `info`.
// max_len comes from the schedule. Throws ErrorKind::Allocation with the
// region name when a capacity is exceeded.
MemoryMap allocate_memory(const ir::IRGraph& g, const hw::HardwareConfig& hw,
                          const CompressionInfo& info, uint32_t max_len);

inline constexpr uint32_t kMTile = 64;  // prefill token rows per tile

}  // namespace flight::mem
