#include "flight/compiler.hpp"

#include <algorithm>
#include <cstring>

#include "flight/compression.hpp"
#include "flight/scales.hpp"

namespace flight::comp {

using isa::Instruction;
using isa::Opcode;
using isa::Region;
using isa::Stage;

uint32_t bucketize(uint32_t len, Stage stage, const hw::BucketSchedule& sched) {
  if (len < 1) fail(ErrorKind::Config, "length must be >= 1");
  if (len > sched.max_len)
    fail(ErrorKind::Capacity, "length " + std::to_string(len) + " exceeds max_len " +
                                  std::to_string(sched.max_len));
  uint32_t b = stage == Stage::Prefill ? sched.prefill_bucket : sched.decode_bucket;
  return (len + b - 1) / b * b;
}

std::vector<uint8_t> encode_params(const std::vector<NodeParams>& records) {
  std::vector<uint8_t> out(records.size() * isa::kRowBytes, 0);
  for (size_t i = 0; i < records.size(); i++) {
    uint8_t* p = out.data() + i * isa::kRowBytes;
    std::memcpy(p, &records[i].mv_scale, 4);
    p[4] = static_cast<uint8_t>(records[i].in_exp);
    p[5] = static_cast<uint8_t>(records[i].in2_exp);
    p[6] = static_cast<uint8_t>(records[i].out_exp);
    p[7] = records[i].flags;
    std::memcpy(p + 8, &records[i].asm_src_row, 2);
    std::memcpy(p + 10, &records[i].asm_dst_row, 2);
    std::memcpy(p + 12, &records[i].asm_rows, 2);
    std::memcpy(p + 16, &records[i].asm_slice_bytes, 4);
  }
  return out;
}

std::vector<NodeParams> decode_params(const std::vector<uint8_t>& bytes) {
  if (bytes.size() % isa::kRowBytes) fail(ErrorKind::Format, "params blob not row aligned");
  std::vector<NodeParams> out(bytes.size() / isa::kRowBytes);
  for (size_t i = 0; i < out.size(); i++) {
    const uint8_t* p = bytes.data() + i * isa::kRowBytes;
    std::memcpy(&out[i].mv_scale, p, 4);
    out[i].in_exp = static_cast<int8_t>(p[4]);
    out[i].in2_exp = static_cast<int8_t>(p[5]);
    out[i].out_exp = static_cast<int8_t>(p[6]);
    out[i].flags = p[7];
    std::memcpy(&out[i].asm_src_row, p + 8, 2);
    std::memcpy(&out[i].asm_dst_row, p + 10, 2);
    std::memcpy(&out[i].asm_rows, p + 12, 2);
    std::memcpy(&out[i].asm_slice_bytes, p + 16, 4);
  }
  return out;
}

uint32_t OnchipPlan::row(const std::string& name) const {
  auto it = slots.find(name);
  if (it == slots.end()) fail(ErrorKind::Compile, "unknown on-chip slot " + name);
  return it->second;
}

CompileInputs CompileInputs::prepare(const ir::IRGraph& g, const hw::HardwareConfig& hw,
                                     const hw::BucketSchedule& sched,
                                     const mem::CompressionInfo& info) {
  sched.validate();
  if (sched.prefill_bucket % 64)
    fail(ErrorKind::Config, "prefill bucket must be a multiple of the 64-token block");
  CompileInputs in;
  in.graph = ir::fuse_layers(ir::remove_views(g));
  in.hw = hw;
  in.sched = sched;
  in.info = info;
  in.map = mem::allocate_memory(in.graph, hw, info, sched.max_len);
  return in;
}

namespace {

constexpr uint32_t kSlotMv = 0;     // MV/MM scale record (on-chip row)
constexpr uint32_t kSlotMisc0 = 1;  // misc record slots
constexpr uint32_t kSlotMisc1 = 2;
constexpr uint32_t kSlotAsm = 8;    // assembly descriptor
constexpr uint32_t kParamRows = 16;

uint32_t pad256(uint32_t v) { return (v + 255u) & ~255u; }
uint32_t rows_of(uint64_t bytes) { return mem::bytes_to_rows(bytes); }
uint32_t log2u(uint32_t v) {
  uint32_t l = 0;
  while ((1u << l) < v) l++;
  return l;
}

// (row offset, 128-byte half flag) of a column byte offset in a strip-major
// array; strips stride kMTile rows for matrices and 1 row for vectors.
std::pair<uint32_t, bool> col_offset(uint32_t byte_off, uint32_t m_rows) {
  uint32_t inrow = byte_off & 255u;
  if (inrow != 0 && inrow != 128) fail(ErrorKind::Compile, "unencodable column offset");
  uint32_t stride = m_rows > 1 ? mem::kMTile : 1;
  return {(byte_off >> 8) * stride, inrow == 128};
}

isa::MiscOp misc_of_act(ir::Activation a) {
  switch (a) {
    case ir::Activation::Silu: return isa::MiscOp::Silu;
    case ir::Activation::Gelu: return isa::MiscOp::Gelu;
    case ir::Activation::Relu: return isa::MiscOp::Relu;
  }
  return isa::MiscOp::Silu;
}

// Handles to one layer's nodes after fusion.
struct LayerView {
  const ir::IRNode* ln1 = nullptr;
  const ir::IRNode* q = nullptr;
  const ir::IRNode* k = nullptr;
  const ir::IRNode* v = nullptr;
  const ir::IRNode* qk = nullptr;   // Fused(QK, Softmax)
  const ir::IRNode* sv = nullptr;
  const ir::IRNode* o = nullptr;    // Fused(Linear, Add)
  const ir::IRNode* ln2 = nullptr;
  const ir::IRNode* fc_a = nullptr;  // gate_proj / fc1 (fused activation)
  const ir::IRNode* up = nullptr;    // gated only
  const ir::IRNode* mul = nullptr;   // gated only
  const ir::IRNode* fc_b = nullptr;  // down_proj / fc2 (fused add)
};

class Emitter {
 public:
  Emitter(const CompileInputs& in, Stage stage, uint32_t bucket, bool materialize, bool merge)
      : in_(in), g_(in.graph), stage_(stage), bucket_(bucket), mat_(materialize),
        merge_(merge), sp_(in.map.split) {
    cfg_ = &g_.cfg;
    D_ = cfg_->hidden_dim;
    F_ = cfg_->ffn_dim;
    dh_ = cfg_->head_dim;
    hps_ = sp_.heads_per_slr;
    rpt_ = sp_.kv_rows_per_token;
    ncores_ = in_.hw.num_cores;
    max_len_ = in_.sched.max_len;
    act_rows_ = static_cast<uint32_t>(in_.hw.activation_buffer_bytes / isa::kRowBytes);
    plan_.weight_seg = act_rows_;
    wseg_rows_ = static_cast<uint32_t>(in_.hw.weight_buffer_bytes / isa::kRowBytes);
    plan_.global_seg = act_rows_ + wseg_rows_;
    if (mat_) params_.resize(in_.map.params_row_budget);
    param_set_.assign(in_.map.params_row_budget, false);
    resolve_layers();
    compute_exps();
    if (stage_ == Stage::Prefill)
      prefill_mask_ = compress::build_attention_mask(in_.info.mask, bucket_);
  }

  void run() {
    if (stage_ == Stage::Decode)
      run_decode();
    else
      run_prefill();
    sys(isa::kSysEnd);
  }

  uint64_t count() const { return count_; }
  const CompileStats& stats() const { return stats_; }
  std::vector<Instruction> take_code() { return std::move(code_); }
  std::vector<NodeParams> take_params() { return std::move(params_); }
  OnchipPlan take_plan() { return std::move(plan_); }

 private:
  const CompileInputs& in_;
  const ir::IRGraph& g_;
  const ir::ModelConfig* cfg_;
  Stage stage_;
  uint32_t bucket_;
  bool mat_, merge_;
  mem::HeadSplit sp_;
  uint32_t D_ = 0, F_ = 0, dh_ = 0, hps_ = 0, rpt_ = 0, ncores_ = 0, max_len_ = 0;
  uint32_t act_rows_ = 0, wseg_rows_ = 0;

  uint64_t count_ = 0;
  std::vector<Instruction> code_;
  std::vector<NodeParams> params_;
  std::vector<bool> param_set_;
  CompileStats stats_;
  OnchipPlan plan_;
  compress::BlockSparseMask prefill_mask_;
  std::vector<LayerView> layers_;
  const ir::IRNode* final_ln_ = nullptr;
  const ir::IRNode* lm_head_ = nullptr;
  std::map<uint32_t, int> texp_;
  uint32_t persist_cursor_ = kParamRows;
  uint32_t transient_base_ = kParamRows, transient_cursor_ = kParamRows;
  uint8_t sync_counter_ = 0;

  // ------------------------------------------------ graph resolution ----

  void resolve_layers() {
    layers_.resize(cfg_->num_layers);
    auto suffix_is = [](const std::string& name, const char* want) {
      size_t dot = name.find('.');
      return dot != std::string::npos && name.compare(dot + 1, std::string::npos, want) == 0;
    };
    for (const ir::IRNode& n : g_.nodes) {
      if (n.name == "final_ln") {
        final_ln_ = &n;
        continue;
      }
      if (n.name == "lm_head") {
        lm_head_ = &n;
        continue;
      }
      LayerView& lv = layers_.at(n.layer);
      if (suffix_is(n.name, "ln1")) lv.ln1 = &n;
      else if (suffix_is(n.name, "q_proj")) lv.q = &n;
      else if (suffix_is(n.name, "k_proj")) lv.k = &n;
      else if (suffix_is(n.name, "v_proj")) lv.v = &n;
      else if (suffix_is(n.name, "qk")) lv.qk = &n;
      else if (suffix_is(n.name, "sv")) lv.sv = &n;
      else if (suffix_is(n.name, "o_proj")) lv.o = &n;
      else if (suffix_is(n.name, "ln2")) lv.ln2 = &n;
      else if (suffix_is(n.name, "gate_proj") || suffix_is(n.name, "fc1")) lv.fc_a = &n;
      else if (suffix_is(n.name, "up_proj")) lv.up = &n;
      else if (suffix_is(n.name, "gate_mul")) lv.mul = &n;
      else if (suffix_is(n.name, "down_proj") || suffix_is(n.name, "fc2")) lv.fc_b = &n;
    }
    for (uint32_t l = 0; l < cfg_->num_layers; l++) {
      const LayerView& lv = layers_[l];
      if (!lv.ln1 || !lv.q || !lv.k || !lv.v || !lv.qk || !lv.sv || !lv.o || !lv.ln2 ||
          !lv.fc_a || !lv.fc_b || (cfg_->gated_ffn() && (!lv.up || !lv.mul)))
        fail(ErrorKind::Compile, "graph does not match the expected transformer layer shape");
    }
    if (!final_ln_) fail(ErrorKind::Compile, "missing final LayerNorm");
  }

  int exp_of(uint32_t tensor) const {
    auto it = texp_.find(tensor);
    if (it == texp_.end()) fail(ErrorKind::Compile, "no scale exponent for tensor");
    return it->second;
  }

  double weight_density(const mem::CompressionInfo::Entry& e) const {
    if (e.codec.kind == compress::TensorKind::Nm)
      return static_cast<double>(e.codec.nm_n) / e.codec.nm_m;
    return 1.0;
  }

  int linear_requant_exp(const ir::IRNode& node) const {
    const ir::TensorRef& w = g_.tensor(node.inputs[1]);
    const auto& ce = in_.info.at(w.name);
    return scales::linear_exp(w.cols, weight_density(ce), ce.max_group_scale,
                              exp_of(node.inputs[0]));
  }

  void compute_exps() {
    texp_[g_.input_tensor] = scales::kEmbeddingExp;
    for (const ir::IRNode& n : g_.nodes) {
      ir::NodeKind base = n.kind == ir::NodeKind::Fused ? n.fused_kinds[0] : n.kind;
      switch (base) {
        case ir::NodeKind::LayerNorm:
          texp_[n.outputs[0]] = scales::layernorm_exp(g_.tensor(n.inputs[0]).cols);
          break;
        case ir::NodeKind::AttentionQK:
          // fp16 scores; a fused softmax makes the node output probabilities
          texp_[n.outputs[0]] = scales::kProbExp;
          break;
        case ir::NodeKind::Softmax:
          texp_[n.outputs[0]] = scales::kProbExp;
          break;
        case ir::NodeKind::AttentionSV:
          texp_[n.outputs[0]] = scales::attention_out_exp(exp_of(n.inputs[1]));
          break;
        case ir::NodeKind::Linear: {
          int e = linear_requant_exp(n);
          if (n.kind == ir::NodeKind::Fused) {
            size_t extra = 2, elt = 0;
            for (size_t i = 1; i < n.fused_kinds.size(); i++) {
              if (n.fused_kinds[i] == ir::NodeKind::Activation)
                e = scales::activation_exp(e);
              else if (n.fused_kinds[i] == ir::NodeKind::Eltwise) {
                int other = exp_of(n.inputs.at(extra++));
                e = n.fused_elt_ops.at(elt++) == ir::EltOp::Add
                        ? scales::eltwise_add_exp(e, other)
                        : scales::eltwise_mul_exp(e, other);
              }
            }
          }
          texp_[n.outputs[0]] = e;
          break;
        }
        case ir::NodeKind::Activation:
          texp_[n.outputs[0]] = scales::activation_exp(exp_of(n.inputs[0]));
          break;
        case ir::NodeKind::Eltwise:
          texp_[n.outputs[0]] =
              n.elt_op == ir::EltOp::Add
                  ? scales::eltwise_add_exp(exp_of(n.inputs[0]), exp_of(n.inputs[1]))
                  : scales::eltwise_mul_exp(exp_of(n.inputs[0]), exp_of(n.inputs[1]));
          break;
        case ir::NodeKind::View:
          texp_[n.outputs[0]] = exp_of(n.inputs[0]);
          break;
        case ir::NodeKind::Fused:
          break;  // unreachable (base resolved above)
      }
    }
  }

  // ------------------------------------------------ on-chip rows --------

  uint32_t alloc_persist(const std::string& name, uint64_t bytes) {
    uint32_t row = persist_cursor_;
    persist_cursor_ += mem::pad_to(rows_of(bytes), 8);
    transient_base_ = transient_cursor_ = persist_cursor_;
    plan_.slots[name] = row;
    check_act(persist_cursor_);
    return row;
  }

  void begin_layer() { transient_cursor_ = transient_base_; }

  uint32_t alloc_t(uint64_t bytes) {
    uint32_t row = transient_cursor_;
    transient_cursor_ += mem::pad_to(rows_of(bytes), 8);
    check_act(transient_cursor_);
    return row;
  }

  uint32_t alloc_tile(uint32_t width_bytes) {  // [kMTile x width] strip-major
    return alloc_t(static_cast<uint64_t>(mem::kMTile) * rows_of(pad256(width_bytes)) *
                   isa::kRowBytes);
  }

  void check_act(uint32_t rows) {
    if (rows > act_rows_)
      fail(ErrorKind::Tiling, "activation buffer exceeded: " + std::to_string(rows) +
                                  " rows of " + std::to_string(act_rows_));
  }

  // ------------------------------------------------ raw emission --------

  void emit(const Instruction& inst) {
    count_++;
    stats_.instructions++;
    if (inst.opcode == Opcode::LD)
      (inst.flags.mem_ddr ? stats_.ld_ddr_bytes : stats_.ld_hbm_bytes) += inst.transfer_bytes();
    else if (inst.opcode == Opcode::ST)
      stats_.st_bytes += inst.transfer_bytes();
    if (mat_) code_.push_back(inst);
  }

  void hbm_move(Opcode op, Region region, uint32_t linear_row, uint32_t rows, uint32_t onchip) {
    uint32_t done = 0;
    if (linear_row % 8 == 0 && rows >= 8) {
      uint32_t groups = rows / 8;
      if (merge_) {
        Instruction inst;
        inst.opcode = op;
        inst.flags.merged_broadcast = true;
        inst.channel_mask = 0xFF;
        inst.offchip = Instruction::pack_addr(region, linear_row / 8);
        inst.onchip = static_cast<uint16_t>(onchip);
        inst.m = static_cast<uint16_t>(groups);
        emit(inst);
        stats_.merged_lds++;
      } else {
        for (uint32_t c = 0; c < 8; c++) {
          Instruction inst;
          inst.opcode = op;
          inst.channel_mask = static_cast<uint8_t>(1u << c);
          inst.offchip = Instruction::pack_addr(region, linear_row / 8);
          inst.onchip = static_cast<uint16_t>(onchip + c);
          inst.m = static_cast<uint16_t>(groups);
          inst.aux = isa::kLdChannelStrided;
          emit(inst);
        }
        stats_.mergeable_singles += 8;
      }
      done = groups * 8;
    }
    for (uint32_t r = done; r < rows; r++) {
      uint32_t lin = linear_row + r;
      Instruction inst;
      inst.opcode = op;
      inst.channel_mask = static_cast<uint8_t>(1u << (lin % 8));
      inst.offchip = Instruction::pack_addr(region, lin / 8);
      inst.onchip = static_cast<uint16_t>(onchip + r);
      inst.m = 1;
      emit(inst);
    }
  }

  void hbm_ld(Region r, uint32_t row, uint32_t rows, uint32_t dst) {
    hbm_move(Opcode::LD, r, row, rows, dst);
  }
  void hbm_st(Region r, uint32_t row, uint32_t rows, uint32_t src) {
    hbm_move(Opcode::ST, r, row, rows, src);
  }

  // single-channel transfer at an explicit channel-local row (KV entries)
  void hbm_single(Opcode op, Region region, mem::KvAddr addr, uint32_t rows, uint32_t onchip) {
    Instruction inst;
    inst.opcode = op;
    inst.channel_mask = static_cast<uint8_t>(1u << addr.channel);
    inst.offchip = Instruction::pack_addr(region, addr.row);
    inst.onchip = static_cast<uint16_t>(onchip);
    inst.m = static_cast<uint16_t>(rows);
    emit(inst);
  }

  void ddr_ld(Region region, uint32_t row, uint32_t rows, uint32_t dst) {
    Instruction inst;
    inst.opcode = Opcode::LD;
    inst.flags.mem_ddr = true;
    inst.offchip = Instruction::pack_addr(region, row);
    inst.onchip = static_cast<uint16_t>(dst);
    inst.m = static_cast<uint16_t>(rows);
    emit(inst);
  }

  void set_param(uint32_t row, const NodeParams& p) {
    if (row >= in_.map.params_row_budget) fail(ErrorKind::Compile, "params budget exceeded");
    if (!mat_) return;
    if (param_set_[row] && !(params_[row] == p))
      fail(ErrorKind::Compile, "conflicting param record " + std::to_string(row));
    params_[row] = p;
    param_set_[row] = true;
  }

  void param_ld(uint32_t record_row, uint32_t slot) { ddr_ld(Region::Params, record_row, 1, slot); }

  void sys(uint8_t aux) {
    Instruction inst;
    inst.opcode = Opcode::SYS;
    inst.aux = aux;
    emit(inst);
  }

  void barrier() { sys(static_cast<uint8_t>(sync_counter_++ & 0x3F)); }

  void assemble(uint32_t desc_row, uint32_t src, uint32_t dst, uint32_t rows,
                uint32_t slice_bytes) {
    NodeParams p;
    p.asm_src_row = static_cast<uint16_t>(src);
    p.asm_dst_row = static_cast<uint16_t>(dst);
    p.asm_rows = static_cast<uint16_t>(rows);
    p.asm_slice_bytes = slice_bytes;
    set_param(desc_row, p);
    param_ld(desc_row, kSlotAsm);
    sys(static_cast<uint8_t>(isa::kSysAssemble | (sync_counter_++ & 0x3F)));
  }

  void misc(isa::MiscOp op, uint32_t m, uint32_t n, uint32_t param_slot, uint32_t in_row,
            uint32_t aux_row, uint32_t out_row) {
    Instruction inst;
    inst.opcode = Opcode::MISC;
    inst.aux = static_cast<uint8_t>(op);
    inst.m = static_cast<uint16_t>(m);
    inst.n = static_cast<uint16_t>(n);
    inst.k = static_cast<uint16_t>(param_slot);
    inst.onchip = static_cast<uint16_t>(in_row);
    inst.offchip = Instruction::pack_onchip_pair(aux_row, out_row);
    emit(inst);
  }

  // strip-major copy of [m x n] bytes between on-chip arrays
  void concat(uint32_t m, uint32_t n, uint32_t src_row, uint32_t src_col, uint32_t dst_row,
              uint32_t dst_col) {
    Instruction inst;
    inst.opcode = Opcode::MISC;
    inst.aux = static_cast<uint8_t>(isa::MiscOp::Concat);
    inst.m = static_cast<uint16_t>(m);
    inst.n = static_cast<uint16_t>(n);
    inst.k = static_cast<uint16_t>(dst_col);
    inst.onchip = static_cast<uint16_t>(src_row);
    inst.offchip = Instruction::pack_onchip_pair(src_col, dst_row);
    emit(inst);
  }

  uint32_t node_rec(const ir::IRNode& n, uint32_t which) const { return n.id * 3 + which; }
  uint32_t asm_rec(uint32_t point) const {
    return static_cast<uint32_t>(g_.nodes.size()) * 3 +
           (stage_ == Stage::Prefill ? 0 : 8) + point;
  }

  void misc_record(const ir::IRNode& node, uint32_t which, int in_exp, int in2_exp,
                   int out_exp, uint32_t slot) {
    NodeParams p;
    p.in_exp = static_cast<int8_t>(in_exp);
    p.in2_exp = static_cast<int8_t>(in2_exp);
    p.out_exp = static_cast<int8_t>(out_exp);
    set_param(node_rec(node, which), p);
    param_ld(node_rec(node, which), slot);
  }

  // ------------------------------------------------ compute helpers -----

  void raw_mm(uint32_t m, uint32_t k, uint32_t n, uint32_t acts_row, uint32_t w_row,
              uint32_t out_row, bool out_fp16, bool transposed, uint32_t k0, uint8_t aux,
              bool half, bool fused = false) {
    Instruction inst;
    inst.opcode = m > 1 ? Opcode::MM : Opcode::MV;
    inst.aux = static_cast<uint8_t>(aux | (out_fp16 ? isa::kMmOutFp16 : 0) |
                                    (transposed ? isa::kMmTransposed : 0) |
                                    (half ? (1u << 6) : 0));
    inst.channel_mask = static_cast<uint8_t>(k0 / 64);
    inst.onchip = static_cast<uint16_t>(acts_row);
    inst.offchip = Instruction::pack_onchip_pair(w_row, out_row);
    inst.m = static_cast<uint16_t>(m);
    inst.k = static_cast<uint16_t>(k);
    inst.n = static_cast<uint16_t>(n);
    inst.flags.fused_misc_follows = fused;
    emit(inst);
  }

  // Stream one weight tensor against on-chip activations. out_row_of maps a
  // strip's first output element to its destination row.
  template <typename OutFn>
  void weight_linear(const ir::IRNode& node, const std::string& wname, uint32_t acts_row,
                     uint32_t m_rows, OutFn out_row_of, bool fused_follows) {
    const mem::WeightPlacement& wp = in_.map.weights.at(wname);
    const auto& ce = in_.info.at(wname);
    bool nm = ce.codec.kind == compress::TensorKind::Nm;

    NodeParams p;
    int in_exp = exp_of(node.inputs[0]);
    p.mv_scale = nm ? static_cast<float>(static_cast<double>(ce.nm_scale.to_float()) *
                                         std::exp2(in_exp))
                    : static_cast<float>(std::exp2(in_exp));
    p.out_exp = static_cast<int8_t>(linear_requant_exp(node));
    set_param(node_rec(node, 0), p);
    param_ld(node_rec(node, 0), kSlotMv);

    const auto& tiles = wp.layout.tiles;
    for (size_t t = 0; t < tiles.size(); t++) {
      const stream::Tile& tile = tiles[t];
      hbm_ld(Region::Weights, wp.region_row + tile.row_offset, tile.rows, plan_.weight_seg);

      Instruction inst;
      inst.opcode = m_rows > 1 ? Opcode::MM : Opcode::MV;
      inst.flags.sparse_enable = nm;
      if (nm) {
        inst.nm_n_log2 = static_cast<uint8_t>(log2u(ce.codec.nm_n));
        inst.nm_log2m = static_cast<uint8_t>(log2u(ce.codec.nm_m));
      }
      bool first = tile.k0 == 0;
      bool last = tile.k0 + tile.k_count == wp.layout.cols;
      inst.aux = static_cast<uint8_t>((first ? isa::kMmInit : 0) | (last ? isa::kMmFinalize : 0) |
                                      (nm ? isa::kMmStreamNm : isa::kMmStreamPacked));
      auto [row_off, half] = col_offset(tile.n0, m_rows);  // int8 outputs
      if (half) inst.aux |= 1u << 6;
      inst.channel_mask = static_cast<uint8_t>(tile.k0 / 64);
      inst.onchip = static_cast<uint16_t>(acts_row);
      inst.offchip = Instruction::pack_onchip_pair(plan_.weight_seg, out_row_of(tile.n0) + row_off);
      inst.m = static_cast<uint16_t>(m_rows);
      inst.k = static_cast<uint16_t>(tile.k_count);
      inst.n = static_cast<uint16_t>(tile.n_count);
      inst.flags.fused_misc_follows = fused_follows && t + 1 == tiles.size();
      emit(inst);
    }
  }

  static std::string tname(uint32_t l, const char* base) {
    return "l" + std::to_string(l) + "." + base;
  }

  bool decode_block_skipped(uint32_t t0, uint32_t nt) const {
    uint32_t q_lo = bucket_ > in_.sched.decode_bucket ? bucket_ - in_.sched.decode_bucket : 0;
    for (uint32_t q = q_lo; q < bucket_; q++)
      for (uint32_t j = t0; j < t0 + nt && j <= q; j++)
        if (compress::attends(in_.info.mask, q, j)) return false;
    return true;
  }

  // -------------------------------------------------------- decode ------

  void run_decode() {
    const uint32_t B = bucket_;
    if (2ull * max_len_ * rpt_ > wseg_rows_)
      fail(ErrorKind::Tiling, "weight buffer too small for the KV streaming window");

    uint32_t mask_row = alloc_persist("mask", 2ull * (max_len_ + 1));
    uint32_t x0 = alloc_persist("x0", pad256(D_));
    uint32_t x1 = alloc_persist("x1", pad256(D_));
    uint32_t kvk = alloc_persist(
        "kvk", static_cast<uint64_t>(cfg_->num_layers) * 2 * hps_ * rpt_ * isa::kRowBytes);
    uint32_t stage_f16 = alloc_persist("stage_f16", 2ull * pad256(D_));
    uint32_t out_i8 = alloc_persist("out_i8", pad256(D_));

    hbm_ld(Region::Io, in_.map.io.at("decode_in").row, rows_of(pad256(D_)), x0);
    ddr_ld(Region::Mask, 0, rows_of(2 * (B + 1)), mask_row);

    uint32_t x_cur = x0;
    uint32_t x_cur_tensor = g_.input_tensor;
    const uint32_t kv_window = max_len_ * rpt_;
    const uint32_t sc_stride = mem::pad_to(rows_of(2ull * (max_len_ + 1)), 8);
    const uint32_t pr_stride = mem::pad_to(rows_of(max_len_ + 1), 8);

    for (uint32_t l = 0; l < cfg_->num_layers; l++) {
      begin_layer();
      const LayerView& lv = layers_[l];
      uint32_t x_next = x_cur == x0 ? x1 : x0;

      uint32_t ln1 = alloc_t(pad256(D_));
      uint32_t q_rows = alloc_t(static_cast<uint64_t>(hps_) * rpt_ * isa::kRowBytes);
      uint32_t sc_rows = alloc_t(static_cast<uint64_t>(hps_) * sc_stride * isa::kRowBytes);
      uint32_t pr_rows = alloc_t(static_cast<uint64_t>(hps_) * pr_stride * isa::kRowBytes);
      uint32_t self_sc = alloc_t(isa::kRowBytes);
      uint32_t self_pr = alloc_t(isa::kRowBytes);
      uint32_t attn_h = alloc_t(static_cast<uint64_t>(hps_) * rpt_ * isa::kRowBytes);
      uint32_t attn_f = alloc_t(pad256(hps_ * dh_));
      uint32_t attn_a = alloc_t(pad256(ncores_ * hps_ * dh_));
      uint32_t o_slice = alloc_t(pad256(sp_.d_slice));
      uint32_t o_all = alloc_t(pad256(ncores_ * sp_.d_slice));
      uint32_t x2 = alloc_t(pad256(D_));
      uint32_t ln2 = alloc_t(pad256(D_));
      uint32_t f_a = alloc_t(pad256(sp_.f_slice));
      uint32_t f_act = alloc_t(pad256(sp_.f_slice));
      uint32_t f_up = alloc_t(pad256(sp_.f_slice));
      uint32_t f_prod = alloc_t(pad256(sp_.f_slice));
      uint32_t f_all = alloc_t(pad256(ncores_ * sp_.f_slice));
      uint32_t d_slice = alloc_t(pad256(sp_.d_slice));
      uint32_t d_all = alloc_t(pad256(ncores_ * sp_.d_slice));

      // LayerNorm 1
      misc_record(*lv.ln1, 1, exp_of(x_cur_tensor), 0, exp_of(lv.ln1->outputs[0]), kSlotMisc0);
      misc(isa::MiscOp::LayerNorm, 1, D_, kSlotMisc0, x_cur, stage_f16, ln1);

      // Q/K/V; fresh K/V land in the per-step stash that the tail stores
      uint32_t k_cur = kvk + (l * 2 + 0) * hps_ * rpt_;
      uint32_t v_cur = kvk + (l * 2 + 1) * hps_ * rpt_;
      auto head_out = [this](uint32_t base) {
        return [base, this](uint32_t n0) { return base + (n0 / dh_) * rpt_; };
      };
      weight_linear(*lv.q, tname(l, "wq"), ln1, 1, head_out(q_rows), false);
      weight_linear(*lv.k, tname(l, "wk"), ln1, 1, head_out(k_cur), false);
      weight_linear(*lv.v, tname(l, "wv"), ln1, 1, head_out(v_cur), false);

      // attention
      int q_exp = exp_of(lv.qk->inputs[0]);
      int k_exp = exp_of(lv.qk->inputs[1]);
      int v_exp = exp_of(lv.sv->inputs[1]);
      NodeParams qk_p;
      qk_p.mv_scale =
          static_cast<float>(std::exp2(q_exp + k_exp) / std::sqrt(static_cast<double>(dh_)));
      set_param(node_rec(*lv.qk, 0), qk_p);
      NodeParams sv_p;
      sv_p.mv_scale = static_cast<float>(std::exp2(scales::kProbExp + v_exp));
      sv_p.out_exp = static_cast<int8_t>(exp_of(lv.sv->outputs[0]));
      set_param(node_rec(*lv.sv, 0), sv_p);

      uint32_t blocks = (B + 63) / 64;
      for (uint32_t h = 0; h < hps_; h++) {
        uint32_t q_h = q_rows + h * rpt_;
        uint32_t sc_h = sc_rows + h * sc_stride;
        uint32_t pr_h = pr_rows + h * pr_stride;

        param_ld(node_rec(*lv.qk, 0), kSlotMv);
        for (uint32_t kb = 0; kb < blocks; kb++) {
          uint32_t t0 = kb * 64;
          uint32_t nt = std::min(64u, B - t0);
          if (decode_block_skipped(t0, nt)) {
            stats_.skipped_blocks++;
            continue;
          }
          hbm_single(Opcode::LD, Region::KvCache, in_.map.kv_addr(l, 0, h, t0), nt * rpt_, plan_.weight_seg);
          auto [ro, half] = col_offset(t0 * 2, 1);
          raw_mm(1, dh_, nt, q_h, plan_.weight_seg, sc_h + ro, true, false, 0,
                 isa::kMmInit | isa::kMmFinalize, half);
        }
        raw_mm(1, dh_, 1, q_h, k_cur + h * rpt_, self_sc, true, false, 0,
               isa::kMmInit | isa::kMmFinalize, false, true);
        concat(1, 2, self_sc, 0, sc_h, 2 * B);

        misc_record(*lv.qk, 1, 0, 0, scales::kProbExp, kSlotMisc0);
        misc(isa::MiscOp::Softmax, 1, B + 1, kSlotMisc0, sc_h, mask_row, pr_h);

        param_ld(node_rec(*lv.sv, 0), kSlotMv);
        bool started = false;
        for (uint32_t kb = 0; kb < blocks; kb++) {
          uint32_t t0 = kb * 64;
          uint32_t nt = std::min(64u, B - t0);
          if (decode_block_skipped(t0, nt)) continue;
          hbm_single(Opcode::LD, Region::KvCache, in_.map.kv_addr(l, 1, h, t0), nt * rpt_,
                 plan_.weight_seg + kv_window);
          raw_mm(1, nt, dh_, pr_h, plan_.weight_seg + kv_window, attn_h + h * rpt_, false,
                 true, t0, started ? 0 : isa::kMmInit, false);
          started = true;
        }
        concat(1, 1, pr_h, B, self_pr, 0);
        raw_mm(1, 1, dh_, self_pr, v_cur + h * rpt_, attn_h + h * rpt_, false, true, 0,
               isa::kMmFinalize | (started ? 0 : isa::kMmInit), false, true);
        concat(1, dh_, attn_h + h * rpt_, 0, attn_f, h * dh_);
      }
      assemble(asm_rec(0), attn_f, attn_a, 1, hps_ * dh_);

      // output projection, fused residual add
      auto flat_out = [](uint32_t base) {
        return [base](uint32_t n0) { return base + (n0 >> 8); };
      };
      weight_linear(*lv.o, tname(l, "wo"), attn_a, 1, flat_out(o_slice), true);
      assemble(asm_rec(1), o_slice, o_all, 1, sp_.d_slice);
      misc_record(*lv.o, 1, linear_requant_exp(*lv.o), exp_of(x_cur_tensor),
                  exp_of(lv.o->outputs[0]), kSlotMisc0);
      misc(isa::MiscOp::Add, 1, D_, kSlotMisc0, o_all, x_cur, x2);
      uint32_t x2_tensor = lv.o->outputs[0];

      // LayerNorm 2
      misc_record(*lv.ln2, 1, exp_of(x2_tensor), 0, exp_of(lv.ln2->outputs[0]), kSlotMisc0);
      misc(isa::MiscOp::LayerNorm, 1, D_, kSlotMisc0, x2, stage_f16, ln2);

      // FFN
      const char* wa = cfg_->gated_ffn() ? "w_gate" : "w1";
      const char* wb = cfg_->gated_ffn() ? "w_down" : "w2";
      weight_linear(*lv.fc_a, tname(l, wa), ln2, 1, flat_out(f_a), true);
      misc_record(*lv.fc_a, 1, linear_requant_exp(*lv.fc_a), 0, exp_of(lv.fc_a->outputs[0]),
                  kSlotMisc0);
      misc(misc_of_act(cfg_->activation), 1, sp_.f_slice, kSlotMisc0, f_a, 0, f_act);
      uint32_t fc_b_in = f_act;
      if (cfg_->gated_ffn()) {
        weight_linear(*lv.up, tname(l, "w_up"), ln2, 1, flat_out(f_up), false);
        misc_record(*lv.mul, 1, exp_of(lv.mul->inputs[0]), exp_of(lv.mul->inputs[1]),
                    exp_of(lv.mul->outputs[0]), kSlotMisc0);
        misc(isa::MiscOp::Mul, 1, sp_.f_slice, kSlotMisc0, f_act, f_up, f_prod);
        fc_b_in = f_prod;
      }
      assemble(asm_rec(2), fc_b_in, f_all, 1, sp_.f_slice);
      weight_linear(*lv.fc_b, tname(l, wb), f_all, 1, flat_out(d_slice), true);
      assemble(asm_rec(3), d_slice, d_all, 1, sp_.d_slice);
      misc_record(*lv.fc_b, 1, linear_requant_exp(*lv.fc_b), exp_of(x2_tensor),
                  exp_of(lv.fc_b->outputs[0]), kSlotMisc0);
      misc(isa::MiscOp::Add, 1, D_, kSlotMisc0, d_all, x2, x_next);

      barrier();
      x_cur = x_next;
      x_cur_tensor = lv.fc_b->outputs[0];
    }

    // final norm, optional head, then the single tail writeback group
    misc_record(*final_ln_, 1, exp_of(x_cur_tensor), 0, exp_of(final_ln_->outputs[0]),
                kSlotMisc0);
    misc(isa::MiscOp::LayerNorm, 1, D_, kSlotMisc0, x_cur, stage_f16, out_i8);
    uint32_t out_row = out_i8;
    if (lm_head_) {
      begin_layer();
      uint32_t logits = alloc_t(pad256(sp_.d_slice));
      uint32_t logits_all = alloc_t(pad256(ncores_ * sp_.d_slice));
      auto flat_out = [](uint32_t base) {
        return [base](uint32_t n0) { return base + (n0 >> 8); };
      };
      weight_linear(*lm_head_, "lm_head", out_i8, 1, flat_out(logits), false);
      assemble(asm_rec(4), logits, logits_all, 1, sp_.d_slice);
      out_row = logits_all;
    }
    hbm_st(Region::Io, in_.map.io.at("decode_out_i8").row, rows_of(pad256(D_)), out_row);
    hbm_st(Region::Io, in_.map.io.at("decode_out_f16").row, rows_of(pad256(2 * D_)), stage_f16);
    for (uint32_t l = 0; l < cfg_->num_layers; l++)
      for (uint32_t side = 0; side < 2; side++)
        for (uint32_t h = 0; h < hps_; h++)
          hbm_single(Opcode::ST, Region::KvAppend, in_.map.kv_addr(l, side, h, 0), rpt_,
                 plan_.row("kvk") + ((l * 2 + side) * hps_ + h) * rpt_);
  }

  // ------------------------------------------------------- prefill ------

  // move a [m x width] token tile between a strip-major off-chip array
  // ([max_len rows per strip]) and an on-chip tile array
  void act_tile_move(Opcode op, Region region, uint32_t slot_row, uint32_t width_bytes,
                     uint32_t t0, uint32_t m, uint32_t tile_row) {
    uint32_t strips = rows_of(pad256(width_bytes));
    for (uint32_t s = 0; s < strips; s++)
      hbm_move(op, region, slot_row + s * max_len_ + t0, m, tile_row + s * mem::kMTile);
  }

  void run_prefill() {
    const uint32_t B = bucket_;
    const uint32_t m_tiles = (B + mem::kMTile - 1) / mem::kMTile;
    const uint32_t grid = (B + 63) / 64;
    const uint32_t mask_strip_rows = mem::kMTile * rows_of(pad256(2 * B));
    const auto& spill = in_.map.spill;
    const auto& io = in_.map.io;

    for (uint32_t l = 0; l < cfg_->num_layers; l++) {
      begin_layer();
      const LayerView& lv = layers_[l];
      Region x_src_region = l == 0 ? Region::Io : Region::Spill;
      uint32_t x_src_row = l == 0 ? io.at("prompt").row : spill.at(l % 2 ? "x_b" : "x_a").row;
      uint32_t x_dst_row = spill.at(l % 2 ? "x_a" : "x_b").row;

      uint32_t xt = alloc_tile(D_);
      uint32_t lnt = alloc_tile(D_);
      uint32_t stage_t = alloc_tile(2 * D_);
      uint32_t qh = alloc_tile(dh_);
      uint32_t kh = alloc_tile(dh_);
      uint32_t vh = alloc_tile(dh_);
      uint32_t qb_t = alloc_tile(dh_);
      uint32_t sst = alloc_tile(2 * B);
      uint32_t pst = alloc_tile(B);
      uint32_t mstrip = alloc_tile(2 * B);
      uint32_t ah = alloc_tile(dh_);
      uint32_t aft = alloc_tile(hps_ * dh_);
      uint32_t aat = alloc_tile(ncores_ * hps_ * dh_);
      uint32_t ot = alloc_tile(sp_.d_slice);
      uint32_t oat = alloc_tile(ncores_ * sp_.d_slice);
      uint32_t x2t = alloc_tile(D_);
      uint32_t ln2t = alloc_tile(D_);
      uint32_t fat = alloc_tile(sp_.f_slice);
      uint32_t factt = alloc_tile(sp_.f_slice);
      uint32_t fut = alloc_tile(sp_.f_slice);
      uint32_t fpt = alloc_tile(sp_.f_slice);
      uint32_t fall = alloc_tile(ncores_ * sp_.f_slice);
      uint32_t dt = alloc_tile(sp_.d_slice);
      uint32_t dat = alloc_tile(ncores_ * sp_.d_slice);
      uint32_t xnt = alloc_tile(D_);

      // P1: norms and Q/K/V projections, K/V appended to the cache
      for (uint32_t mt = 0; mt < m_tiles; mt++) {
        uint32_t t0 = mt * mem::kMTile;
        uint32_t m = std::min(mem::kMTile, B - t0);
        act_tile_move(Opcode::LD, x_src_region, x_src_row, D_, t0, m, xt);
        misc_record(*lv.ln1, 1, exp_of(layer_input_tensor(l)), 0, exp_of(lv.ln1->outputs[0]),
                    kSlotMisc0);
        misc(isa::MiscOp::LayerNorm, m, D_, kSlotMisc0, xt, stage_t, lnt);
        for (uint32_t h = 0; h < hps_; h++) {
          auto one_head = [&](uint32_t base, uint32_t head) {
            return [base, head, this](uint32_t n0) {
              if (n0 != head * dh_) fail(ErrorKind::Compile, "unexpected strip");
              return base;
            };
          };
          weight_linear_strip(*lv.q, tname(l, "wq"), lnt, m, qh, h);
          weight_linear_strip(*lv.k, tname(l, "wk"), lnt, m, kh, h);
          weight_linear_strip(*lv.v, tname(l, "wv"), lnt, m, vh, h);
          (void)one_head;
          hbm_st(Region::Spill, spill.at("q").row + h * max_len_ * rpt_ + t0 * rpt_, m * rpt_,
                 qh);
          hbm_single(Opcode::ST, Region::KvAppend, in_.map.kv_addr(l, 0, h, t0), m * rpt_, kh);
          hbm_single(Opcode::ST, Region::KvAppend, in_.map.kv_addr(l, 1, h, t0), m * rpt_, vh);
        }
      }
      barrier();

      // P2: block-sparse attention
      int q_exp = exp_of(lv.qk->inputs[0]);
      int k_exp = exp_of(lv.qk->inputs[1]);
      int v_exp = exp_of(lv.sv->inputs[1]);
      NodeParams qk_p;
      qk_p.mv_scale =
          static_cast<float>(std::exp2(q_exp + k_exp) / std::sqrt(static_cast<double>(dh_)));
      set_param(node_rec(*lv.qk, 0), qk_p);
      NodeParams sv_p;
      sv_p.mv_scale = static_cast<float>(std::exp2(scales::kProbExp + v_exp));
      sv_p.out_exp = static_cast<int8_t>(exp_of(lv.sv->outputs[0]));
      set_param(node_rec(*lv.sv, 0), sv_p);

      for (uint32_t qb = 0; qb < grid; qb++) {
        uint32_t q0 = qb * 64;
        uint32_t qm = std::min(64u, B - q0);
        for (uint32_t s = 0; s < rows_of(pad256(2 * B)); s++)
          ddr_ld(Region::Mask, qb * mask_strip_rows + s * mem::kMTile, qm,
                 mstrip + s * mem::kMTile);
        for (uint32_t h = 0; h < hps_; h++) {
          hbm_ld(Region::Spill, spill.at("q").row + h * max_len_ * rpt_ + q0 * rpt_, qm * rpt_,
                 qb_t);
          param_ld(node_rec(*lv.qk, 0), kSlotMv);
          for (uint32_t kb = 0; kb <= qb; kb++) {
            if (!prefill_mask_.bit(qb, kb)) {
              stats_.skipped_blocks++;
              continue;
            }
            if (prefill_mask_.is_partial(qb, kb)) stats_.partial_blocks++;
            uint32_t nt = std::min(64u, B - kb * 64);
            hbm_single(Opcode::LD, Region::KvCache, in_.map.kv_addr(l, 0, h, kb * 64), nt * rpt_,
                   plan_.weight_seg);
            auto [ro, half] = col_offset(kb * 64 * 2, mem::kMTile);
            raw_mm(qm, dh_, nt, qb_t, plan_.weight_seg, sst + ro, true, false, 0,
                   isa::kMmInit | isa::kMmFinalize, half, true);
            stats_.attention_qk_mms++;
          }
          misc_record(*lv.qk, 1, 0, 0, scales::kProbExp, kSlotMisc0);
          misc(isa::MiscOp::Softmax, qm, B, kSlotMisc0, sst, mstrip, pst);

          param_ld(node_rec(*lv.sv, 0), kSlotMv);
          bool started = false;
          uint32_t kept = 0, total_kept = 0;
          for (uint32_t kb = 0; kb <= qb; kb++)
            if (prefill_mask_.bit(qb, kb)) total_kept++;
          for (uint32_t kb = 0; kb <= qb; kb++) {
            if (!prefill_mask_.bit(qb, kb)) continue;
            uint32_t nt = std::min(64u, B - kb * 64);
            hbm_single(Opcode::LD, Region::KvCache, in_.map.kv_addr(l, 1, h, kb * 64), nt * rpt_,
                   plan_.weight_seg + 64 * rpt_);
            kept++;
            raw_mm(qm, nt, dh_, pst, plan_.weight_seg + 64 * rpt_, ah, false, true, kb * 64,
                   (started ? 0 : isa::kMmInit) | (kept == total_kept ? isa::kMmFinalize : 0),
                   false);
            started = true;
          }
          concat(qm, dh_, ah, 0, aft, h * dh_);
        }
        assemble(asm_rec(0), aft, aat, mem::kMTile, hps_ * dh_);
        act_tile_move(Opcode::ST, Region::Spill, spill.at("attn").row,
                      ncores_ * hps_ * dh_, q0, qm, aat);
      }
      barrier();

      // P3: output projection, residual, FFN
      auto flat_out = [](uint32_t base) {
        return [base](uint32_t n0) { return base + (n0 >> 8) * mem::kMTile; };
      };
      for (uint32_t mt = 0; mt < m_tiles; mt++) {
        uint32_t t0 = mt * mem::kMTile;
        uint32_t m = std::min(mem::kMTile, B - t0);
        act_tile_move(Opcode::LD, Region::Spill, spill.at("attn").row, ncores_ * hps_ * dh_,
                      t0, m, aat);
        weight_linear(*lv.o, tname(l, "wo"), aat, m, flat_out(ot), true);
        assemble(asm_rec(1), ot, oat, mem::kMTile, sp_.d_slice);
        act_tile_move(Opcode::LD, x_src_region, x_src_row, D_, t0, m, xt);
        misc_record(*lv.o, 1, linear_requant_exp(*lv.o), exp_of(layer_input_tensor(l)),
                    exp_of(lv.o->outputs[0]), kSlotMisc0);
        misc(isa::MiscOp::Add, m, D_, kSlotMisc0, oat, xt, x2t);
        misc_record(*lv.ln2, 1, exp_of(lv.o->outputs[0]), 0, exp_of(lv.ln2->outputs[0]),
                    kSlotMisc0);
        misc(isa::MiscOp::LayerNorm, m, D_, kSlotMisc0, x2t, stage_t, ln2t);

        const char* wa = cfg_->gated_ffn() ? "w_gate" : "w1";
        const char* wb = cfg_->gated_ffn() ? "w_down" : "w2";
        weight_linear(*lv.fc_a, tname(l, wa), ln2t, m, flat_out(fat), true);
        misc_record(*lv.fc_a, 1, linear_requant_exp(*lv.fc_a), 0, exp_of(lv.fc_a->outputs[0]),
                    kSlotMisc0);
        misc(misc_of_act(cfg_->activation), m, sp_.f_slice, kSlotMisc0, fat, 0, factt);
        uint32_t fc_b_in = factt;
        if (cfg_->gated_ffn()) {
          weight_linear(*lv.up, tname(l, "w_up"), ln2t, m, flat_out(fut), false);
          misc_record(*lv.mul, 1, exp_of(lv.mul->inputs[0]), exp_of(lv.mul->inputs[1]),
                      exp_of(lv.mul->outputs[0]), kSlotMisc0);
          misc(isa::MiscOp::Mul, m, sp_.f_slice, kSlotMisc0, factt, fut, fpt);
          fc_b_in = fpt;
        }
        assemble(asm_rec(2), fc_b_in, fall, mem::kMTile, sp_.f_slice);
        weight_linear(*lv.fc_b, tname(l, wb), fall, m, flat_out(dt), true);
        assemble(asm_rec(3), dt, dat, mem::kMTile, sp_.d_slice);
        misc_record(*lv.fc_b, 1, linear_requant_exp(*lv.fc_b), exp_of(lv.o->outputs[0]),
                    exp_of(lv.fc_b->outputs[0]), kSlotMisc0);
        misc(isa::MiscOp::Add, m, D_, kSlotMisc0, dat, x2t, xnt);
        act_tile_move(Opcode::ST, Region::Spill, x_dst_row, D_, t0, m, xnt);
      }
      barrier();
    }

    // final norm over the last residual stream
    begin_layer();
    uint32_t xt = alloc_tile(D_);
    uint32_t stage_t = alloc_tile(2 * D_);
    uint32_t outt = alloc_tile(D_);
    uint32_t x_last = spill.at(cfg_->num_layers % 2 ? "x_a" : "x_b").row;
    uint32_t final_in_tensor =
        cfg_->num_layers ? layers_.back().fc_b->outputs[0] : g_.input_tensor;
    for (uint32_t mt = 0; mt < m_tiles; mt++) {
      uint32_t t0 = mt * mem::kMTile;
      uint32_t m = std::min(mem::kMTile, B - t0);
      act_tile_move(Opcode::LD, Region::Spill, x_last, D_, t0, m, xt);
      misc_record(*final_ln_, 1, exp_of(final_in_tensor), 0, exp_of(final_ln_->outputs[0]),
                  kSlotMisc0);
      misc(isa::MiscOp::LayerNorm, m, D_, kSlotMisc0, xt, stage_t, outt);
      uint32_t out_src = outt;
      if (lm_head_) {
        uint32_t lt = alloc_tile(sp_.d_slice);
        uint32_t lat = alloc_tile(ncores_ * sp_.d_slice);
        auto flat_out2 = [](uint32_t base) {
          return [base](uint32_t n0) { return base + (n0 >> 8) * mem::kMTile; };
        };
        weight_linear(*lm_head_, "lm_head", outt, m, flat_out2(lt), false);
        assemble(asm_rec(4), lt, lat, mem::kMTile, sp_.d_slice);
        out_src = lat;
      }
      act_tile_move(Opcode::ST, Region::Io, io.at("out_i8").row, D_, t0, m, out_src);
      act_tile_move(Opcode::ST, Region::Io, io.at("out_f16").row, 2 * D_, t0, m, stage_t);
    }
  }

  // one head's strip of a head-aligned projection
  void weight_linear_strip(const ir::IRNode& node, const std::string& wname, uint32_t acts_row,
                           uint32_t m_rows, uint32_t out_row, uint32_t head) {
    const mem::WeightPlacement& wp = in_.map.weights.at(wname);
    const auto& ce = in_.info.at(wname);
    bool nm = ce.codec.kind == compress::TensorKind::Nm;

    NodeParams p;
    int in_exp = exp_of(node.inputs[0]);
    p.mv_scale = nm ? static_cast<float>(static_cast<double>(ce.nm_scale.to_float()) *
                                         std::exp2(in_exp))
                    : static_cast<float>(std::exp2(in_exp));
    p.out_exp = static_cast<int8_t>(linear_requant_exp(node));
    set_param(node_rec(node, 0), p);
    param_ld(node_rec(node, 0), kSlotMv);

    for (const stream::Tile& tile : wp.layout.tiles) {
      if (tile.n0 != head * dh_) continue;
      hbm_ld(Region::Weights, wp.region_row + tile.row_offset, tile.rows, plan_.weight_seg);
      Instruction inst;
      inst.opcode = m_rows > 1 ? Opcode::MM : Opcode::MV;
      inst.flags.sparse_enable = nm;
      if (nm) {
        inst.nm_n_log2 = static_cast<uint8_t>(log2u(ce.codec.nm_n));
        inst.nm_log2m = static_cast<uint8_t>(log2u(ce.codec.nm_m));
      }
      bool first = tile.k0 == 0;
      bool last = tile.k0 + tile.k_count == wp.layout.cols;
      inst.aux = static_cast<uint8_t>((first ? isa::kMmInit : 0) | (last ? isa::kMmFinalize : 0) |
                                      (nm ? isa::kMmStreamNm : isa::kMmStreamPacked));
      inst.channel_mask = static_cast<uint8_t>(tile.k0 / 64);
      inst.onchip = static_cast<uint16_t>(acts_row);
      inst.offchip = Instruction::pack_onchip_pair(plan_.weight_seg, out_row);
      inst.m = static_cast<uint16_t>(m_rows);
      inst.k = static_cast<uint16_t>(tile.k_count);
      inst.n = static_cast<uint16_t>(tile.n_count);
      emit(inst);
    }
  }

  uint32_t layer_input_tensor(uint32_t l) const {
    return l == 0 ? g_.input_tensor : layers_[l - 1].fc_b->outputs[0];
  }
};

CompiledProgram lower_impl(const CompileInputs& in, Stage stage, uint32_t bucket) {
  Emitter e(in, stage, bucket, true, in.sched.channel_merge);
  e.run();
  CompiledProgram out;
  out.stats = e.stats();
  out.params = e.take_params();
  out.plan = e.take_plan();
  out.program.stage = stage;
  out.program.bucket_len = bucket;
  out.program.layer_lo = 0;
  out.program.layer_hi = static_cast<uint16_t>(in.graph.cfg.num_layers - 1);
  out.program.code = e.take_code();
  if (in.sched.slr_sharing)
    out.program.slr_bases = in.map.bases;
  else
    out.program.slr_bases = {in.map.bases.at(0)};
  return out;
}

}  // namespace

CompiledProgram lower_graph(const CompileInputs& in, Stage stage, uint32_t bucket_len) {
  if (bucket_len < 1 || bucket_len > in.sched.max_len)
    fail(ErrorKind::Capacity, "bucket length out of range");
  return lower_impl(in, stage, bucket_len);
}

uint64_t lower_count(const CompileInputs& in, Stage stage, uint32_t bucket_len,
                     bool channel_merge) {
  Emitter e(in, stage, bucket_len, false, channel_merge);
  e.run();
  return e.count();
}

const CompiledProgram& ProgramLibrary::find(Stage stage, uint32_t bucket) const {
  for (const CompiledProgram& p : programs)
    if (p.program.stage == stage && p.program.bucket_len == bucket) return p;
  fail(ErrorKind::Compile, "no program for bucket " + std::to_string(bucket));
}

ProgramLibrary compile_library(const CompileInputs& in) {
  ProgramLibrary lib;
  lib.model = in.graph.cfg;
  lib.hw = in.hw;
  lib.sched = in.sched;
  lib.map = in.map;
  lib.params.resize(in.map.params_row_budget);
  std::vector<bool> have(in.map.params_row_budget, false);

  auto add_stage = [&](Stage stage, uint32_t bucket_step) {
    for (uint32_t b = bucket_step; b <= in.sched.max_len; b += bucket_step) {
      CompiledProgram p;
      try {
        p = lower_impl(in, stage, b);
      } catch (const Error& e) {
        fail(e.kind(), std::string(isa::to_string(stage)) + " bucket " + std::to_string(b) +
                           ": " + e.what());
      }
      for (size_t r = 0; r < p.params.size(); r++) {
        bool nonzero = !(p.params[r] == NodeParams{});
        if (!nonzero) continue;
        if (have[r] && !(lib.params[r] == p.params[r]))
          fail(ErrorKind::Compile, "param record differs across buckets");
        lib.params[r] = p.params[r];
        have[r] = true;
      }
      lib.programs.push_back(std::move(p));
    }
  };
  add_stage(Stage::Prefill, in.sched.prefill_bucket);
  add_stage(Stage::Decode, in.sched.decode_bucket);
  return lib;
}

SizeReport library_size_report(const CompileInputs& in) {
  SizeReport rep;
  const uint32_t slrs = in.hw.num_cores;
  for (uint32_t len = 1; len <= in.sched.max_len; len++) {
    rep.naive_bytes += 16ull * lower_count(in, Stage::Prefill, len, false) * slrs;
    rep.naive_bytes += 16ull * lower_count(in, Stage::Decode, len, false) * slrs;
  }
  uint32_t copies = in.sched.slr_sharing ? 1 : slrs;
  auto bucketed_stage = [&](Stage stage, uint32_t step, bool merge) {
    uint64_t total = 0;
    for (uint32_t b = step; b <= in.sched.max_len; b += step)
      total += (64 + 16ull * lower_count(in, stage, b, merge)) * copies;
    return total;
  };
  rep.bucketed_bytes = bucketed_stage(Stage::Prefill, in.sched.prefill_bucket, false) +
                       bucketed_stage(Stage::Decode, in.sched.decode_bucket, false);
  bool merge = in.sched.channel_merge;
  rep.merged_bytes = bucketed_stage(Stage::Prefill, in.sched.prefill_bucket, merge) +
                     bucketed_stage(Stage::Decode, in.sched.decode_bucket, merge);
  rep.reduction_factor =
      rep.merged_bytes ? static_cast<double>(rep.naive_bytes) / rep.merged_bytes : 0.0;
  return rep;
}

}  // namespace flight::comp
