#include "flight/isa.hpp"

#include <sstream>

namespace flight::isa {

uint64_t Instruction::transfer_bytes() const {
  if (opcode != Opcode::LD && opcode != Opcode::ST) return 0;
  uint64_t rows = m;
  if (flags.merged_broadcast) rows *= 8;  // m is per-channel for broadcast words
  return rows * kRowBytes;
}

Word encode_instruction(const Instruction& inst) {
  if (static_cast<uint8_t>(inst.opcode) > 5) fail(ErrorKind::Encoding, "bad opcode");
  if (inst.nm_n_log2 > 0xF || inst.nm_log2m > 0xF)
    fail(ErrorKind::Encoding, "nm code overflow");
  if (inst.opcode == Opcode::SYS) {
    // SYS carries only its sync byte.
    if (inst.offchip || inst.onchip || inst.m || inst.k || inst.n ||
        inst.channel_mask || inst.nm_n_log2 || inst.nm_log2m)
      fail(ErrorKind::Encoding, "SYS uses only sync_id");
  }

  uint8_t flag_bits = static_cast<uint8_t>(inst.flags.merged_broadcast) |
                      static_cast<uint8_t>(inst.flags.mem_ddr) << 1 |
                      static_cast<uint8_t>(inst.flags.sparse_enable) << 2 |
                      static_cast<uint8_t>(inst.flags.fused_misc_follows) << 3;

  uint64_t hi = 0, lo = 0;
  hi |= static_cast<uint64_t>(inst.opcode) << 60;
  hi |= static_cast<uint64_t>(flag_bits) << 56;
  hi |= static_cast<uint64_t>(inst.channel_mask) << 48;
  hi |= static_cast<uint64_t>(inst.offchip) << 16;
  hi |= static_cast<uint64_t>(inst.onchip);
  lo |= static_cast<uint64_t>(inst.m) << 48;
  lo |= static_cast<uint64_t>(inst.k) << 32;
  lo |= static_cast<uint64_t>(inst.n) << 16;
  lo |= static_cast<uint64_t>(inst.nm_n_log2 & 0xF) << 12;
  lo |= static_cast<uint64_t>(inst.nm_log2m & 0xF) << 8;
  lo |= static_cast<uint64_t>(inst.aux);

  Word w;
  for (int i = 0; i < 8; i++) w[i] = static_cast<uint8_t>(lo >> (8 * i));
  for (int i = 0; i < 8; i++) w[8 + i] = static_cast<uint8_t>(hi >> (8 * i));
  return w;
}

Instruction decode_instruction(const Word& w) {
  uint64_t lo = 0, hi = 0;
  for (int i = 0; i < 8; i++) lo |= static_cast<uint64_t>(w[i]) << (8 * i);
  for (int i = 0; i < 8; i++) hi |= static_cast<uint64_t>(w[8 + i]) << (8 * i);

  uint8_t op = static_cast<uint8_t>(hi >> 60);
  if (op > 5) fail(ErrorKind::IllegalInst, "opcode nibble " + std::to_string(op));

  Instruction inst;
  inst.opcode = static_cast<Opcode>(op);
  uint8_t flag_bits = static_cast<uint8_t>((hi >> 56) & 0xF);
  inst.flags.merged_broadcast = flag_bits & 1;
  inst.flags.mem_ddr = flag_bits & 2;
  inst.flags.sparse_enable = flag_bits & 4;
  inst.flags.fused_misc_follows = flag_bits & 8;
  inst.channel_mask = static_cast<uint8_t>((hi >> 48) & 0xFF);
  inst.offchip = static_cast<uint32_t>((hi >> 16) & 0xFFFFFFFFu);
  inst.onchip = static_cast<uint16_t>(hi & 0xFFFF);
  inst.m = static_cast<uint16_t>((lo >> 48) & 0xFFFF);
  inst.k = static_cast<uint16_t>((lo >> 32) & 0xFFFF);
  inst.n = static_cast<uint16_t>((lo >> 16) & 0xFFFF);
  inst.nm_n_log2 = static_cast<uint8_t>((lo >> 12) & 0xF);
  inst.nm_log2m = static_cast<uint8_t>((lo >> 8) & 0xF);
  inst.aux = static_cast<uint8_t>(lo & 0xFF);
  return inst;
}

std::optional<Instruction> merge_channel_lds(const std::vector<Instruction>& group) {
  if (group.size() != 8) return std::nullopt;
  const Instruction& first = group[0];
  if (first.opcode != Opcode::LD && first.opcode != Opcode::ST) return std::nullopt;
  if (first.flags.mem_ddr || first.flags.merged_broadcast) return std::nullopt;
  if (!(first.aux & kLdChannelStrided)) return std::nullopt;
  if (first.channel_mask != 0x01) return std::nullopt;

  int64_t stride = 0;
  if (group.size() > 1)
    stride = static_cast<int64_t>(group[1].row()) - static_cast<int64_t>(first.row());
  if (stride < 0 || stride > 0xFFFF) return std::nullopt;

  for (int c = 0; c < 8; c++) {
    const Instruction& g = group[c];
    if (g.opcode != first.opcode || g.flags != first.flags) return std::nullopt;
    if (g.channel_mask != (1u << c)) return std::nullopt;
    if (g.m != first.m || g.k != first.k || g.n != first.n) return std::nullopt;
    if (g.aux != first.aux) return std::nullopt;
    if (g.region() != first.region()) return std::nullopt;
    if (g.row() != first.row() + static_cast<uint32_t>(c) * static_cast<uint32_t>(stride))
      return std::nullopt;
    if (g.onchip != first.onchip + c) return std::nullopt;
  }

  Instruction merged = first;
  merged.flags.merged_broadcast = true;
  merged.channel_mask = 0xFF;
  merged.n = static_cast<uint16_t>(stride);
  merged.aux = first.aux & ~kLdChannelStrided;
  return merged;
}

std::array<Instruction, 8> expand_merged(const Instruction& merged) {
  if (!merged.flags.merged_broadcast)
    fail(ErrorKind::IllegalInst, "expand of non-merged instruction");
  std::array<Instruction, 8> out;
  for (int c = 0; c < 8; c++) {
    Instruction inst = merged;
    inst.flags.merged_broadcast = false;
    inst.channel_mask = static_cast<uint8_t>(1u << c);
    inst.offchip = Instruction::pack_addr(
        merged.region(), merged.row() + static_cast<uint32_t>(c) * merged.n);
    inst.onchip = static_cast<uint16_t>(merged.onchip + c);
    inst.n = merged.n;
    inst.aux = merged.aux | kLdChannelStrided;
    out[c] = inst;
  }
  return out;
}

std::string Instruction::to_string() const {
  static const char* names[] = {"LD", "ST", "MM", "MV", "MISC", "SYS"};
  std::ostringstream os;
  os << names[static_cast<int>(opcode)];
  if (flags.merged_broadcast) os << ".x8";
  if (flags.mem_ddr) os << ".ddr";
  if (flags.sparse_enable) os << ".nm" << nm_n() << ":" << nm_m();
  if (flags.fused_misc_follows) os << ".f";
  os << " ch=" << std::hex << static_cast<int>(channel_mask) << std::dec;
  if (opcode == Opcode::LD || opcode == Opcode::ST)
    os << " r" << static_cast<int>(region()) << "+" << row();
  else
    os << " w/aux2=" << weight_rows() << " out=" << out_rows();
  os << " on=" << onchip << " m=" << m << " k=" << k << " n=" << n
     << " aux=" << static_cast<int>(aux);
  return os.str();
}

}  // namespace flight::isa
