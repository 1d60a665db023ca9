#pragma once

#include <string>
#include <vector>

#include "flight/compiler.hpp"
#include "flight/container.hpp"
#include "flight/isa.hpp"

namespace flight::pio {

// "FLIS" program file: fixed 64-byte header, then 16-byte instruction words.
// Per-SLR base-address tables live in the library manifest, not in the file.
void write_program(const isa::Program& p, const std::string& path);
isa::Program read_program(const std::string& path);  // without base tables

inline constexpr uint16_t kProgramVersion = 1;

// Library directory layout:
//   manifest.json                program table, base tables, configs
//   prefill_NNNN.flis / decode_NNNN.flis
//   params.bin                   node parameter records (DDR image)
//   weights.flcm                 compression container copy
struct LoadedLibrary {
  ir::ModelConfig model;
  hw::HardwareConfig hw;
  hw::BucketSchedule sched;
  compress::Container container;
  std::vector<comp::NodeParams> params;
  std::vector<isa::Program> programs;

  const isa::Program& find(isa::Stage stage, uint32_t bucket) const;
};

void write_library(const comp::ProgramLibrary& lib, const compress::Container& container,
                   const std::string& dir);
LoadedLibrary read_library(const std::string& dir);

}  // namespace flight::pio
