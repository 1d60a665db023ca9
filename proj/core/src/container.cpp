#include "flight/container.hpp"

#include <cstring>
#include <fstream>

namespace flight::compress {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'C', 'M'};
constexpr size_t kHeaderBytes = 20;
constexpr size_t kEntryBytes = 112;

void put_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(static_cast<uint8_t>(x));
  v.push_back(static_cast<uint8_t>(x >> 8));
}
void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; i++) v.push_back(static_cast<uint8_t>(x >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& v, uint64_t x) {
  for (int i = 0; i < 8; i++) v.push_back(static_cast<uint8_t>(x >> (8 * i)));
}
uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | p[1] << 8); }
uint32_t get_u32(const uint8_t* p) {
  return p[0] | p[1] << 8 | p[2] << 16 | static_cast<uint32_t>(p[3]) << 24;
}
uint64_t get_u64(const uint8_t* p) {
  uint64_t x = 0;
  for (int i = 0; i < 8; i++) x |= static_cast<uint64_t>(p[i]) << (8 * i);
  return x;
}

std::vector<uint8_t> payload_of(const ContainerEntry& e) {
  switch (e.kind) {
    case TensorKind::Nm:
      return nm_stream(e.nm());
    case TensorKind::Packed:
      return packed_stream(e.packed());
    case TensorKind::Mask: {
      const BlockSparseMask& m = e.mask();
      std::vector<uint8_t> out = m.bits;
      out.insert(out.end(), m.partial.begin(), m.partial.end());
      return out;
    }
  }
  fail(ErrorKind::Format, "bad tensor kind");
}

}  // namespace

uint64_t ContainerEntry::stream_bytes() const {
  switch (kind) {
    case TensorKind::Nm:
      return nm_stream_bytes(nm());
    case TensorKind::Packed:
      return packed_stream_bytes(packed());
    case TensorKind::Mask:
      return mask().bits.size() + mask().partial.size();
  }
  return 0;
}

const ContainerEntry* Container::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const ContainerEntry& Container::at(const std::string& name) const {
  const ContainerEntry* e = find(name);
  if (!e) fail(ErrorKind::Format, "container tensor not found: " + name);
  return *e;
}

void write_container(const Container& c, const std::string& path) {
  std::vector<uint8_t> head;
  head.insert(head.end(), kMagic, kMagic + 4);
  put_u16(head, kContainerVersion);
  put_u16(head, 0);
  put_u32(head, static_cast<uint32_t>(c.entries.size()));
  put_u64(head, c.seed);

  std::vector<std::vector<uint8_t>> payloads;
  payloads.reserve(c.entries.size());
  uint64_t offset = kHeaderBytes + kEntryBytes * c.entries.size();

  std::vector<uint8_t> table;
  for (const auto& e : c.entries) {
    payloads.push_back(payload_of(e));
    const auto& pl = payloads.back();

    std::vector<uint8_t> row;
    put_u32(row, e.id);
    row.push_back(static_cast<uint8_t>(e.kind));
    row.insert(row.end(), 3, 0);
    char name[40] = {};
    std::strncpy(name, e.name.c_str(), sizeof(name) - 1);
    row.insert(row.end(), name, name + 40);
    put_u32(row, e.rows);
    put_u32(row, e.cols);
    put_u64(row, offset);
    put_u64(row, pl.size());

    uint64_t meta[4] = {0, 0, 0, 0};
    switch (e.kind) {
      case TensorKind::Nm:
        meta[0] = e.nm().scale.bits | (static_cast<uint64_t>(e.nm().m) << 16);
        meta[1] = e.nm().kept_count();
        break;
      case TensorKind::Packed:
        meta[0] = e.packed().group_count();
        break;
      case TensorKind::Mask: {
        const BlockSparseMask& m = e.mask();
        meta[0] = m.grid_rows | (static_cast<uint64_t>(m.grid_cols) << 32);
        meta[1] = static_cast<uint64_t>(m.spec.kind);
        meta[2] = m.spec.window | (static_cast<uint64_t>(m.spec.global) << 32);
        meta[3] = m.seq_len;
        break;
      }
    }
    for (uint64_t mv : meta) put_u64(row, mv);
    put_u64(row, 0);  // reserved tail
    if (row.size() != kEntryBytes) fail(ErrorKind::Format, "container entry size bug");
    table.insert(table.end(), row.begin(), row.end());
    offset += pl.size();
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
  out.write(reinterpret_cast<const char*>(table.data()), static_cast<std::streamsize>(table.size()));
  for (const auto& pl : payloads)
    out.write(reinterpret_cast<const char*>(pl.data()), static_cast<std::streamsize>(pl.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < kHeaderBytes || std::memcmp(buf.data(), kMagic, 4) != 0)
    fail(ErrorKind::Format, "not a FLCM container: " + path);
  if (get_u16(buf.data() + 4) != kContainerVersion)
    fail(ErrorKind::Format, "unsupported container version");
  uint32_t count = get_u32(buf.data() + 8);
  if (buf.size() < kHeaderBytes + kEntryBytes * count)
    fail(ErrorKind::Format, "container table truncated");

  Container c;
  c.seed = get_u64(buf.data() + 12);
  for (uint32_t i = 0; i < count; i++) {
    const uint8_t* row = buf.data() + kHeaderBytes + kEntryBytes * i;
    ContainerEntry e;
    e.id = get_u32(row);
    e.kind = static_cast<TensorKind>(row[4]);
    char name[41] = {};
    std::memcpy(name, row + 8, 40);
    e.name = name;
    e.rows = get_u32(row + 48);
    e.cols = get_u32(row + 52);
    uint64_t off = get_u64(row + 56);
    uint64_t len = get_u64(row + 64);
    uint64_t meta[4];
    for (int j = 0; j < 4; j++) meta[j] = get_u64(row + 72 + 8 * j);
    if (off + len > buf.size()) fail(ErrorKind::Format, "container payload out of range");
    const uint8_t* pl = buf.data() + off;

    switch (e.kind) {
      case TensorKind::Nm: {
        f16 scale = f16::from_bits(static_cast<uint16_t>(meta[0] & 0xFFFF));
        uint32_t m = static_cast<uint32_t>((meta[0] >> 16) & 0xFF);
        e.data = nm_from_stream(pl, len, e.rows, e.cols, m, scale);
        break;
      }
      case TensorKind::Packed:
        e.data = packed_from_stream(pl, len, e.rows, e.cols);
        break;
      case TensorKind::Mask: {
        BlockSparseMask m;
        m.grid_rows = static_cast<uint32_t>(meta[0] & 0xFFFFFFFF);
        m.grid_cols = static_cast<uint32_t>(meta[0] >> 32);
        m.spec.kind = static_cast<MaskKind>(meta[1]);
        m.spec.window = static_cast<uint32_t>(meta[2] & 0xFFFFFFFF);
        m.spec.global = static_cast<uint32_t>(meta[2] >> 32);
        m.seq_len = static_cast<uint32_t>(meta[3]);
        size_t cells = static_cast<size_t>(m.grid_rows) * m.grid_cols;
        if (len != 2 * cells) fail(ErrorKind::Format, "mask payload size mismatch");
        m.bits.assign(pl, pl + cells);
        m.partial.assign(pl + cells, pl + 2 * cells);
        e.data = std::move(m);
        break;
      }
      default:
        fail(ErrorKind::Format, "unknown tensor kind in container");
    }
    c.entries.push_back(std::move(e));
  }
  return c;
}

}  // namespace flight::compress
