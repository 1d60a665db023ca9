#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flight/error.hpp"
#include "flight/fp16.hpp"

namespace flight::compress {

// ---------------------------------------------------------------- N:M ----

// N:M pruned int8 weights. The matrix is carved into 16x16 blocks; every
// block carries one N value (M fixed per tensor), and each M-wide group of a
// row keeps exactly N entries, positions strictly increasing.
struct NMSparseTensor {
  uint32_t rows = 0, cols = 0;
  uint32_t m = 16;                   // group width, power of two <= 16
  std::vector<uint8_t> per_block_n;  // (rows/16) x (cols/16), row-major
  std::vector<int8_t> values;        // kept values, block-record order
  std::vector<uint8_t> indices;      // position of each kept value in its group
  f16 scale;                         // per-tensor dequantization scale

  uint32_t block_rows() const { return rows / 16; }
  uint32_t block_cols() const { return cols / 16; }
  uint8_t block_n(uint32_t br, uint32_t bc) const {
    return per_block_n.at(br * block_cols() + bc);
  }
  uint64_t kept_count() const { return values.size(); }

  bool operator==(const NMSparseTensor&) const = default;
};

// Keep the n largest-magnitude entries of every m-wide group (ties resolved
// toward the lower index). dims must be multiples of 16; m a power of two
// dividing 16; n == 0 or a divisor of m.
NMSparseTensor prune_nm(const std::vector<int8_t>& dense, uint32_t rows, uint32_t cols,
                        uint32_t n, uint32_t m);

std::vector<int8_t> densify(const NMSparseTensor& t);

// Serialized block-record stream, the exact bytes the accelerator streams:
// per block [n:u8][16*kpr values][packed 4-bit indices], kpr = n*16/m.
std::vector<uint8_t> nm_stream(const NMSparseTensor& t);
NMSparseTensor nm_from_stream(const uint8_t* data, size_t size, uint32_t rows, uint32_t cols,
                              uint32_t m, f16 scale);
uint64_t nm_stream_bytes(const NMSparseTensor& t);
uint64_t nm_block_record_bytes(uint32_t n, uint32_t m);

// ------------------------------------------------------------- masks ----

enum class MaskKind : uint8_t { DenseCausal = 0, LocalWindow = 1, LocalPlusGlobal = 2 };

struct MaskSpec {
  MaskKind kind = MaskKind::DenseCausal;
  uint32_t window = 0;  // aligned-chunk width, multiple of 64
  uint32_t global = 0;  // always-attended prefix, multiple of 64
};

// Token-level attention predicate: may query row i attend column j.
// local_window keys to the aligned chunk floor(i/w); local_plus_global adds
// a global prefix of g positions. Causality applies to every kind.
bool attends(const MaskSpec& spec, uint64_t i, uint64_t j);

// 64x64 block coarsening of the token-level mask.
struct BlockSparseMask {
  MaskSpec spec;
  uint32_t seq_len = 0;
  uint32_t grid_rows = 0, grid_cols = 0;
  std::vector<uint8_t> bits;     // 1 = block computed
  std::vector<uint8_t> partial;  // 1 = block only partially attended

  bool bit(uint32_t bi, uint32_t bj) const { return bits.at(bi * grid_cols + bj) != 0; }
  bool is_partial(uint32_t bi, uint32_t bj) const {
    return partial.at(bi * grid_cols + bj) != 0;
  }
  uint64_t set_count() const;
};

BlockSparseMask build_attention_mask(const MaskSpec& spec, uint32_t seq_len);

// --------------------------------------------------------- packed -------

// Grouped mixed-precision weights: 16 input channels per group, 2/3/4/8-bit
// two's-complement payload packed little-endian and padded to whole bytes
// per group, one fp16 scale per group.
struct PackedQuantTensor {
  uint32_t rows = 0, cols = 0;
  std::vector<uint8_t> per_group_bits;  // rows * cols/16, row-major
  std::vector<f16> per_group_scale;
  std::vector<uint8_t> payload;  // concatenated per-group payloads

  uint32_t groups_per_row() const { return cols / 16; }
  uint64_t group_count() const { return static_cast<uint64_t>(rows) * groups_per_row(); }
  uint64_t payload_offset(uint64_t group) const;  // byte offset into payload

  bool operator==(const PackedQuantTensor&) const = default;
};

inline constexpr uint32_t kQuantGroup = 16;

bool valid_bits(uint32_t b);

// plan: bits per group, row-major; pattern plans are expanded by cycling.
PackedQuantTensor quantize_mixed(const std::vector<f16>& dense, uint32_t rows, uint32_t cols,
                                 const std::vector<uint8_t>& bit_plan);

// Sign-extended int8 lanes of one group plus its scale.
std::pair<std::array<int8_t, kQuantGroup>, f16> dequantize_group(const PackedQuantTensor& t,
                                                                 uint64_t group_idx);

// Raw group codec used by the dequantize roundtrip tests.
std::vector<uint8_t> pack_group(const int8_t* q, uint32_t bits);
void unpack_group(const uint8_t* bytes, size_t nbytes, uint32_t bits, int8_t* out);

std::vector<f16> dequantize_all(const PackedQuantTensor& t);

// Streamed record form: per group [bits:u8][scale:u16le][payload].
std::vector<uint8_t> packed_stream(const PackedQuantTensor& t);
PackedQuantTensor packed_from_stream(const uint8_t* data, size_t size, uint32_t rows,
                                     uint32_t cols);
uint64_t packed_stream_bytes(const PackedQuantTensor& t);

double average_plan_bits(const std::vector<uint8_t>& bit_plan);

// Default mixed-precision pattern, cycled over groups: averages 3.5 bits.
inline const std::vector<uint8_t>& default_bit_pattern() {
  static const std::vector<uint8_t> p = {3, 3, 4, 4};
  return p;
}

std::vector<uint8_t> expand_bit_plan(const std::vector<uint8_t>& pattern, uint64_t groups);

// ------------------------------------------------- int8 helpers ---------

// Symmetric per-tensor int8 quantization: scale = max|v|/127 (1 if all
// zero), round half away from zero, clamp to [-127, 127].
std::pair<std::vector<int8_t>, f16> quantize_symmetric_int8(const std::vector<f16>& dense);

int8_t quantize_value(double v, double scale);

}  // namespace flight::compress
