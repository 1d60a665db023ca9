#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "flight/compression.hpp"

namespace flight::compress {

// "FLCM" compression container: little-endian, 20-byte header, fixed
// 112-byte tensor table entries, then raw payload streams. Exact layout in
// docs/FORMATS.md.
enum class TensorKind : uint8_t { Nm = 0, Mask = 1, Packed = 2 };

struct ContainerEntry {
  uint32_t id = 0;
  std::string name;
  TensorKind kind = TensorKind::Nm;
  uint32_t rows = 0, cols = 0;
  std::variant<NMSparseTensor, BlockSparseMask, PackedQuantTensor> data;

  const NMSparseTensor& nm() const { return std::get<NMSparseTensor>(data); }
  const BlockSparseMask& mask() const { return std::get<BlockSparseMask>(data); }
  const PackedQuantTensor& packed() const { return std::get<PackedQuantTensor>(data); }

  // bytes the accelerator streams for this tensor
  uint64_t stream_bytes() const;
};

struct Container {
  uint64_t seed = 0;  // weight synthesis seed, 0 when weights came from a file
  std::vector<ContainerEntry> entries;

  const ContainerEntry* find(const std::string& name) const;
  const ContainerEntry& at(const std::string& name) const;
};

void write_container(const Container& c, const std::string& path);
Container read_container(const std::string& path);

inline constexpr uint16_t kContainerVersion = 1;

}  // namespace flight::compress
