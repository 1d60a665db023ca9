#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flight/error.hpp"

namespace flight::isa {

// On-chip buffer rows and off-chip addressing share one granularity.
inline constexpr uint32_t kRowBytes = 256;

// Off-chip addresses are (region, row-offset) pairs packed into 32 bits.
// Row offsets inside HBM regions are per-channel: row r of a region lives in
// channel (r % 8) of the owning core's channel group, at channel-local row
// base + r / 8.
enum class Region : uint8_t {
  Weights = 0,   // HBM, per-SLR compressed weight streams
  KvCache = 1,   // HBM, per-SLR K/V token rows (reads)
  KvAppend = 2,  // KvCache alias shifted by the runtime append register
  Spill = 3,     // HBM, prefill activation scratch
  Io = 4,        // HBM, prompt embeddings in, hidden states out
  Mask = 5,      // DDR, runtime-filled attention mask vectors
  Lut = 6,       // DDR, exp/silu/gelu interpolation tables
  Params = 7,    // DDR, per-node scale records
};
inline constexpr int kNumRegions = 8;

inline bool region_on_ddr(Region r) {
  return r == Region::Mask || r == Region::Lut || r == Region::Params;
}

enum class Opcode : uint8_t { LD = 0, ST = 1, MM = 2, MV = 3, MISC = 4, SYS = 5 };

enum class MiscOp : uint8_t {
  Softmax = 0,
  LayerNorm = 1,
  Silu = 2,
  Gelu = 3,
  Add = 4,
  Mul = 5,
  Concat = 6,
  Relu = 7,
};

// aux byte for MM/MV control
inline constexpr uint8_t kMmInit = 1u << 0;         // zero partials first
inline constexpr uint8_t kMmFinalize = 1u << 1;     // apply scales, write output
inline constexpr uint8_t kMmOutFp16 = 1u << 2;      // staging output in fp16
inline constexpr uint8_t kMmStreamNm = 1u << 3;     // weight stream is N:M blocks
inline constexpr uint8_t kMmStreamPacked = 1u << 4; // weight stream is packed groups
inline constexpr uint8_t kMmTransposed = 1u << 5;   // stream rows run along k
// aux byte for LD/ST
inline constexpr uint8_t kLdChannelStrided = 1u << 0;  // on-chip row stride 8
// aux byte for SYS
inline constexpr uint8_t kSysAssemble = 1u << 7;  // cross-SLR vector assembly
inline constexpr uint8_t kSysEnd = 1u << 6;       // end of inference

struct Flags {
  bool merged_broadcast = false;  // one word fans out to 8 HBM channels
  bool mem_ddr = false;           // off-chip side is DDR instead of HBM
  bool sparse_enable = false;     // N:M datapath active
  bool fused_misc_follows = false;

  bool operator==(const Flags&) const = default;
};

// One 128-bit instruction word.
//
// Field layout (bit positions in the logical word):
//   [127:124] opcode      [123:120] flags       [119:112] channel_mask
//   [111:80]  offchip     [79:64]   onchip      [63:48] m
//   [47:32]   k           [31:16]   n           [15:12] nm_n_log2
//   [11:8]    nm_log2m    [7:0]     aux (misc_op / sync_id / control)
//
// offchip carries (region << 28 | row) for LD/ST. MM/MV and MISC have no
// off-chip operand, so the field is repurposed as two extra on-chip row
// bases: hi16 = weight rows (MM/MV) or second operand rows (MISC),
// lo16 = output rows.
struct Instruction {
  Opcode opcode = Opcode::LD;
  Flags flags;
  uint8_t channel_mask = 0;
  uint32_t offchip = 0;
  uint16_t onchip = 0;
  uint16_t m = 0, k = 0, n = 0;
  uint8_t nm_n_log2 = 0;  // log2(N); valid only when sparse_enable
  uint8_t nm_log2m = 0;   // log2(M)
  uint8_t aux = 0;

  bool operator==(const Instruction&) const = default;

  // offchip helpers
  Region region() const { return static_cast<Region>(offchip >> 28); }
  uint32_t row() const { return offchip & 0x0FFFFFFFu; }
  static uint32_t pack_addr(Region r, uint32_t row_off) {
    if (row_off > 0x0FFFFFFFu) fail(ErrorKind::Encoding, "region row offset overflow");
    return (static_cast<uint32_t>(r) << 28) | row_off;
  }
  uint16_t weight_rows() const { return static_cast<uint16_t>(offchip >> 16); }
  uint16_t out_rows() const { return static_cast<uint16_t>(offchip & 0xFFFFu); }
  static uint32_t pack_onchip_pair(uint32_t hi, uint32_t lo) {
    if (hi > 0xFFFFu || lo > 0xFFFFu) fail(ErrorKind::Encoding, "on-chip row overflow");
    return (hi << 16) | lo;
  }

  MiscOp misc_op() const { return static_cast<MiscOp>(aux); }
  uint8_t sync_id() const { return aux; }
  uint32_t nm_n() const { return 1u << nm_n_log2; }
  uint32_t nm_m() const { return 1u << nm_log2m; }

  // Total off-chip bytes moved by an LD/ST (0 for other opcodes).
  uint64_t transfer_bytes() const;

  std::string to_string() const;
};

using Word = std::array<uint8_t, 16>;

// Fixed 128-bit little-endian encoding; throws ErrorKind::Encoding when a
// field does not fit its slot (only reachable через raw field poking).
Word encode_instruction(const Instruction& inst);

// Inverse of encode_instruction; opcode nibbles above 5 throw
// ErrorKind::IllegalInst.
Instruction decode_instruction(const Word& w);

// Fold 8 per-channel LD/ST words into one broadcast word. The group must
// share opcode, dims and flags, carry channel bits 0..7 in order, address
// rows base + c*stride for a uniform stride, and place chunks 8 rows apart
// on chip. Anything else is reported as not-mergeable (nullopt) and the
// caller keeps the originals.
std::optional<Instruction> merge_channel_lds(const std::vector<Instruction>& group);

// Inverse of merge_channel_lds.
std::array<Instruction, 8> expand_merged(const Instruction& merged);

enum class Stage : uint8_t { Prefill = 0, Decode = 1 };

inline const char* to_string(Stage s) { return s == Stage::Prefill ? "prefill" : "decode"; }

// Per-SLR off-chip base rows, one entry per Region. HBM entries are
// channel-local row offsets, DDR entries plain row offsets.
using BaseTable = std::array<uint32_t, kNumRegions>;

struct Program {
  Stage stage = Stage::Decode;
  uint32_t bucket_len = 0;
  uint16_t layer_lo = 0;
  uint16_t layer_hi = 0;  // inclusive
  std::vector<Instruction> code;
  std::vector<BaseTable> slr_bases;  // one per SLR sharing this program

  // 64-byte fixed header + 16 bytes per word (base tables live in the
  // library manifest, not in the program file).
  uint64_t binary_size() const { return 64 + 16ull * code.size(); }
};

}  // namespace flight::isa
