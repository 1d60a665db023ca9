#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flight/hw_config.hpp"
#include "flight/isa.hpp"

namespace flight::sim {

struct Monitor {
  std::array<uint64_t, isa::kNumRegions> region_ld_bytes{};
  std::array<uint64_t, isa::kNumRegions> region_st_bytes{};
  uint64_t hbm_bytes = 0;
  uint64_t ddr_bytes = 0;
  uint64_t remote_bytes = 0;       // cross-SLR assembly traffic
  uint64_t instructions = 0;
  bool nan_seen = false;
  // decode residency: activation traffic between the first and the final
  // store group must be zero
  uint64_t decode_activation_spill_bytes = 0;
  bool decode_st_before_tail = false;
};

// Off-chip byte stores plus per-core unified buffer rows. HBM is flat with
// channel c owning [c * cap, (c+1) * cap); on-chip rows cover activation,
// weight, global and index segments back to back.
struct MachineState {
  explicit MachineState(const hw::HardwareConfig& hw);

  hw::HardwareConfig hw;
  std::vector<uint8_t> hbm;
  std::vector<uint8_t> ddr;
  std::vector<std::vector<uint8_t>> buf;  // one per core
  uint32_t append_row = 0;                // KvAppend dynamic offset (channel-local rows)
  Monitor monitor;

  uint8_t* hbm_ptr(uint32_t channel, uint64_t channel_row);
  uint8_t* ddr_ptr(uint64_t row);
  uint8_t* buf_ptr(uint32_t core, uint32_t row);

  bool equal_memories(const MachineState& o) const;

  // "FLST" binary snapshot of every byte store, for golden-file tests
  void dump_snapshot(const std::string& path) const;
};

}  // namespace flight::sim
