#include "flight/memory_map.hpp"

#include <algorithm>

#include "flight/lut.hpp"

namespace flight::mem {

HeadSplit head_split(const ir::ModelConfig& cfg, uint32_t cores) {
  HeadSplit s;
  s.heads_per_slr = (cfg.num_heads + cores - 1) / cores;
  s.qkv_slice = s.heads_per_slr * cfg.head_dim;
  s.d_slice = pad_to((cfg.hidden_dim + cores - 1) / cores, 16);
  s.f_slice = pad_to((cfg.ffn_dim + cores - 1) / cores, 16);
  s.kv_rows_per_token = bytes_to_rows(cfg.head_dim);
  return s;
}

const CompressionInfo::Entry& CompressionInfo::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorKind::Compile, "tensor not registered: " + name);
  return it->second;
}

CompressionInfo CompressionInfo::from_container(const compress::Container& c,
                                                const ir::IRGraph& g) {
  CompressionInfo info;
  for (const ir::TensorRef& t : g.tensors) {
    if (t.role != ir::TensorRole::Weight) continue;
    const compress::ContainerEntry& e = c.at(t.name);
    if (e.rows != t.rows || e.cols != t.cols)
      fail(ErrorKind::Compile, "container shape mismatch for " + t.name);
    Entry entry;
    entry.codec = stream::codec_of(e);
    if (e.kind == compress::TensorKind::Nm) {
      entry.nm_scale = e.nm().scale;
      entry.max_group_scale = e.nm().scale.to_float();
    } else {
      float mx = 0.f;
      for (f16 s : e.packed().per_group_scale) mx = std::max(mx, s.to_float());
      entry.max_group_scale = mx == 0.f ? 1.0 : mx;
    }
    info.tensors[t.name] = std::move(entry);
  }
  const compress::ContainerEntry* m = c.find("attention_mask");
  if (m) info.mask = m->mask().spec;
  return info;
}

CompressionInfo CompressionInfo::uniform_nm(const ir::IRGraph& g, uint32_t n, uint32_t m) {
  CompressionInfo info;
  for (const ir::TensorRef& t : g.tensors) {
    if (t.role != ir::TensorRole::Weight) continue;
    Entry e;
    e.codec.kind = compress::TensorKind::Nm;
    e.codec.nm_n = n;
    e.codec.nm_m = m;
    e.nm_scale = f16::from_float(1.f / 127.f);
    e.max_group_scale = e.nm_scale.to_float();
    info.tensors[t.name] = std::move(e);
  }
  return info;
}

KvAddr MemoryMap::kv_addr(uint32_t layer, uint32_t side, uint32_t head,
                          uint32_t token) const {
  uint32_t entry = (layer * 2 + side) * split.heads_per_slr + head;
  KvAddr a;
  a.channel = static_cast<uint8_t>(entry % 8);
  a.row = (entry / 8) * kv_rows_per_entry + token * split.kv_rows_per_token;
  return a;
}

namespace {

uint32_t pad8(uint32_t rows) { return pad_to(rows, 8); }

SpillSlot take(uint32_t& cursor, uint64_t bytes) {
  SpillSlot s;
  s.row = cursor;
  s.rows = pad8(bytes_to_rows(bytes));
  cursor += s.rows;
  return s;
}

}  // namespace

MemoryMap allocate_memory(const ir::IRGraph& g, const hw::HardwareConfig& hw,
                          const CompressionInfo& info, uint32_t max_len) {
  hw.validate();
  const ir::ModelConfig& cfg = g.cfg;
  if (max_len > cfg.max_seq_len)
    fail(ErrorKind::Allocation, "schedule max_len exceeds model max_seq_len");

  MemoryMap map;
  map.num_slrs = hw.num_cores;
  map.max_len = max_len;
  map.split = head_split(cfg, hw.num_cores);

  const uint64_t tile_budget = hw.weight_buffer_bytes / 2;
  const uint64_t partial_budget = hw.global_buffer_bytes;

  // ---- Weights region: per-SLR streams, graph tensor order
  uint32_t wrow = 0;
  for (const ir::TensorRef& t : g.tensors) {
    if (t.role != ir::TensorRole::Weight) continue;
    const CompressionInfo::Entry& e = info.at(t.name);
    bool head_aligned = t.name.find("wq") != std::string::npos ||
                        t.name.find("wk") != std::string::npos ||
                        t.name.find("wv") != std::string::npos;
    uint32_t slice;
    uint32_t hint = 0;
    if (head_aligned) {
      slice = map.split.qkv_slice;
      hint = cfg.head_dim;  // one strip per head
    } else if (t.cols == cfg.ffn_dim) {
      slice = map.split.d_slice;  // down projection
    } else if (t.rows == cfg.ffn_dim) {
      slice = map.split.f_slice;  // gate/up/fc1
    } else {
      slice = map.split.d_slice;  // o projection, fc2, lm_head
    }
    WeightPlacement wp;
    wp.layout = stream::plan_stream(e.codec, slice, t.cols, tile_budget, partial_budget,
                                    kMTile, hint);
    wp.region_row = wrow;
    wrow += wp.layout.total_rows;
    map.weights[t.name] = std::move(wp);
  }
  map.region_rows[static_cast<int>(isa::Region::Weights)] = wrow;
  map.weight_stream_bytes = static_cast<uint64_t>(wrow) * isa::kRowBytes;

  // ---- KV cache: (layer, K/V, local head) entries of max_len tokens,
  // whole entries assigned round-robin to channels
  map.kv_rows_per_entry = max_len * map.split.kv_rows_per_token;
  uint64_t kv_entries = static_cast<uint64_t>(cfg.num_layers) * 2 * map.split.heads_per_slr;
  uint64_t kv_channel_rows = ((kv_entries + 7) / 8) * map.kv_rows_per_entry;
  map.region_rows[static_cast<int>(isa::Region::KvCache)] =
      static_cast<uint32_t>(kv_channel_rows * 8);  // linear-equivalent extent
  map.region_rows[static_cast<int>(isa::Region::KvAppend)] = 0;  // alias of KvCache

  // ---- Spill: prefill scratch (strip-major [max_len x width] tensors)
  {
    uint32_t cursor = 0;
    uint64_t d_bytes = static_cast<uint64_t>(max_len) * pad_to(cfg.hidden_dim, 256);
    map.spill["x_a"] = take(cursor, d_bytes);
    map.spill["x_b"] = take(cursor, d_bytes);
    uint64_t q_bytes = static_cast<uint64_t>(map.split.heads_per_slr) * max_len *
                       map.split.kv_rows_per_token * isa::kRowBytes;
    map.spill["q"] = take(cursor, q_bytes);
    uint64_t attn_bytes = static_cast<uint64_t>(max_len) *
                          pad_to(map.split.qkv_slice * hw.num_cores, 256);
    map.spill["attn"] = take(cursor, attn_bytes);
    map.region_rows[static_cast<int>(isa::Region::Spill)] = cursor;
  }

  // ---- Io: embeddings in, hidden states out
  {
    uint32_t cursor = 0;
    uint64_t d_bytes = static_cast<uint64_t>(max_len) * pad_to(cfg.hidden_dim, 256);
    map.io["prompt"] = take(cursor, d_bytes);
    map.io["decode_in"] = take(cursor, pad_to(cfg.hidden_dim, 256));
    map.io["out_i8"] = take(cursor, d_bytes);
    map.io["out_f16"] = take(cursor, 2 * d_bytes);
    map.io["decode_out_i8"] = take(cursor, pad_to(cfg.hidden_dim, 256));
    map.io["decode_out_f16"] = take(cursor, pad_to(2 * cfg.hidden_dim, 256));
    map.region_rows[static_cast<int>(isa::Region::Io)] = cursor;
  }

  // ---- DDR: mask strips, LUTs, node parameter records
  map.mask_prefill_strip_rows = kMTile * bytes_to_rows(pad_to(2 * max_len, 256));
  uint32_t mask_rows = std::max<uint32_t>(
      (pad_to(max_len, kMTile) / kMTile) * map.mask_prefill_strip_rows,
      pad8(bytes_to_rows(2 * (max_len + 1))));
  map.region_rows[static_cast<int>(isa::Region::Mask)] = mask_rows;
  map.region_rows[static_cast<int>(isa::Region::Lut)] =
      pad8(bytes_to_rows(lut::kNumTables * lut::kTableBytes));
  map.params_row_budget = 16 * static_cast<uint32_t>(g.nodes.size()) + 64;
  map.region_rows[static_cast<int>(isa::Region::Params)] = map.params_row_budget;

  // ---- base tables and capacity checks
  uint32_t hbm_cursor = 0;  // channel-relative rows
  uint32_t ddr_cursor = 0;
  isa::BaseTable base{};
  for (int r = 0; r < isa::kNumRegions; r++) {
    isa::Region reg = static_cast<isa::Region>(r);
    if (reg == isa::Region::KvAppend) {
      base[r] = base[static_cast<int>(isa::Region::KvCache)];
      continue;
    }
    if (isa::region_on_ddr(reg)) {
      base[r] = ddr_cursor;
      ddr_cursor += map.region_rows[r];
    } else {
      base[r] = hbm_cursor;
      hbm_cursor += (map.region_rows[r] + 7) / 8;
    }
  }
  map.hbm_rows_per_channel = hbm_cursor;
  map.ddr_rows = ddr_cursor;
  map.bases.assign(hw.num_cores, base);

  uint64_t channel_bytes = static_cast<uint64_t>(hbm_cursor) * isa::kRowBytes;
  if (channel_bytes > hw.hbm_channel_capacity()) {
    // name the largest contributor
    const char* names[] = {"weights", "kv_cache", "kv_cache", "spill", "io"};
    int worst = 0;
    for (int r = 1; r < 5; r++)
      if (map.region_rows[r] > map.region_rows[worst]) worst = r;
    fail(ErrorKind::Allocation,
         std::string("HBM capacity exceeded (region ") + names[worst] + "): need " +
             std::to_string(channel_bytes * hw.hbm_channels) + " bytes of " +
             std::to_string(hw.hbm_bytes));
  }
  if (static_cast<uint64_t>(ddr_cursor) * isa::kRowBytes > hw.ddr_bytes)
    fail(ErrorKind::Allocation, "DDR capacity exceeded (region mask/lut/params)");
  return map;
}

}  // namespace flight::mem
