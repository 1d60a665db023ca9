#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flight/hw_config.hpp"
#include "flight/isa.hpp"
#include "flight/memory_map.hpp"
#include "flight/model_graph.hpp"

namespace flight::comp {

// Smallest stage-bucket multiple covering len; lengths above max_len are a
// capacity error.
uint32_t bucketize(uint32_t len, isa::Stage stage, const hw::BucketSchedule& sched);

// One 256-byte parameter record per compiled entity, stored in the DDR
// Params region. Compute and MISC instructions read scales from here;
// SYS assembly reads its copy descriptor.
struct NodeParams {
  float mv_scale = 1.f;
  int8_t in_exp = 0;
  int8_t in2_exp = 0;
  int8_t out_exp = 0;
  uint8_t flags = 0;
  uint16_t asm_src_row = 0;
  uint16_t asm_dst_row = 0;
  uint16_t asm_rows = 0;
  uint32_t asm_slice_bytes = 0;

  bool operator==(const NodeParams&) const = default;
};

std::vector<uint8_t> encode_params(const std::vector<NodeParams>& records);
std::vector<NodeParams> decode_params(const std::vector<uint8_t>& bytes);

struct CompileStats {
  uint64_t instructions = 0;
  uint64_t attention_qk_mms = 0;   // block-level score matmuls
  uint64_t skipped_blocks = 0;
  uint64_t partial_blocks = 0;
  uint64_t merged_lds = 0;         // broadcast words emitted
  uint64_t mergeable_singles = 0;  // per-channel words a merge would fold
  uint64_t ld_hbm_bytes = 0;
  uint64_t ld_ddr_bytes = 0;
  uint64_t st_bytes = 0;
};

// On-chip row assignments for one stage (shared by every bucket).
struct OnchipPlan {
  std::map<std::string, uint32_t> slots;
  uint32_t weight_seg = 0;  // streaming area base row
  uint32_t global_seg = 0;  // partial accumulator base row
  uint32_t row(const std::string& name) const;
};

struct CompileInputs {
  ir::IRGraph graph;  // normalized on construction
  hw::HardwareConfig hw;
  hw::BucketSchedule sched;
  mem::CompressionInfo info;
  mem::MemoryMap map;

  static CompileInputs prepare(const ir::IRGraph& g, const hw::HardwareConfig& hw,
                               const hw::BucketSchedule& sched,
                               const mem::CompressionInfo& info);
};

struct CompiledProgram {
  isa::Program program;
  CompileStats stats;
  std::vector<NodeParams> params;
  OnchipPlan plan;
};

// Lower one (stage, bucket) pair. Views are removed and MISC fusion applied
// first when the caller passed an unnormalized graph (both passes are
// idempotent, so lowering is insensitive to whether they already ran).
CompiledProgram lower_graph(const CompileInputs& in, isa::Stage stage, uint32_t bucket_len);

// Instruction count of one (stage, bucket) pair without materializing the
// program; exact by construction (the same emission walk runs underneath).
uint64_t lower_count(const CompileInputs& in, isa::Stage stage, uint32_t bucket_len,
                     bool channel_merge);

struct ProgramLibrary {
  ir::ModelConfig model;
  hw::HardwareConfig hw;
  hw::BucketSchedule sched;
  mem::MemoryMap map;
  std::vector<NodeParams> params;       // shared records, row-indexed
  std::vector<CompiledProgram> programs;  // prefill buckets, then decode buckets

  const CompiledProgram& find(isa::Stage stage, uint32_t bucket) const;
};

ProgramLibrary compile_library(const CompileInputs& in);

struct SizeReport {
  uint64_t naive_bytes = 0;     // per-length, per-SLR, unmerged
  uint64_t bucketed_bytes = 0;  // schedule buckets, SLR sharing, unmerged
  uint64_t merged_bytes = 0;    // plus channel merging
  double reduction_factor = 0;  // naive / merged
};

SizeReport library_size_report(const CompileInputs& in);

}  // namespace flight::comp
