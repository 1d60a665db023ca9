#pragma once

#include <cstdint>
#include <string>

#include "flight/error.hpp"
#include "flight/isa.hpp"

namespace flight::hw {

// Accelerator + platform description. Defaults model the Alveo U280 build:
// 3 cores (one per SLR), 16 MPUs each, 4x8x4 parallelism, 32 HBM channels
// at 14.4 GB/s and 38 GB/s DDR.
struct HardwareConfig {
  double frequency_mhz = 225.0;
  uint32_t num_cores = 3;
  uint32_t mpus_per_core = 16;
  uint32_t p_m = 4, p_k = 8, p_n = 4;

  uint32_t hbm_channels = 32;
  double hbm_channel_gbps = 14.4;
  uint64_t hbm_bytes = 8ull << 30;
  uint32_t hbm_latency_cycles = 56;

  double ddr_gbps = 38.0;
  uint64_t ddr_bytes = 32ull << 30;
  uint32_t ddr_latency_cycles = 28;

  uint64_t weight_buffer_bytes = 1ull << 20;
  uint64_t global_buffer_bytes = 512ull << 10;
  uint64_t activation_buffer_bytes = 8ull << 20;
  uint64_t index_buffer_bytes = 256ull << 10;

  // platform totals used by the resource model
  uint32_t dsp_total = 9024;
  uint32_t uram_total = 960;
  uint32_t bram_total = 2016;
  uint32_t uram_width_bits = 72;
  uint32_t activation_width_bits = 8;

  // simulator timing constants (calibrated once, see docs)
  uint32_t sfu_lanes = 1;
  uint32_t sfu_lut_cycles_per_elem = 2;
  uint32_t sfu_elem_cycles = 1;
  uint32_t sys_latency_cycles = 64;
  uint32_t issue_cycles = 2;
  uint32_t remote_bytes_per_cycle = 64;

  // Each core streams through a fixed 8-channel group.
  static constexpr uint32_t kChannelsPerCore = 8;

  double cycles_per_second() const { return frequency_mhz * 1e6; }
  double hbm_channel_bytes_per_cycle() const {
    return hbm_channel_gbps * 1e9 / cycles_per_second();
  }
  double core_hbm_bytes_per_cycle() const {
    return hbm_channel_bytes_per_cycle() * kChannelsPerCore;
  }
  double ddr_bytes_per_cycle() const { return ddr_gbps * 1e9 / cycles_per_second(); }
  double hbm_peak_gbps() const { return hbm_channel_gbps * hbm_channels; }
  uint64_t hbm_channel_capacity() const { return hbm_bytes / hbm_channels; }
  uint32_t onchip_rows() const {
    return static_cast<uint32_t>((activation_buffer_bytes + weight_buffer_bytes +
                                  global_buffer_bytes + index_buffer_bytes) /
                                 isa::kRowBytes);
  }
  // MAC lanes one core can commit per cycle (two int8 MACs per DSP)
  uint64_t core_mac_lanes() const {
    return 2ull * p_m * p_k * p_n * mpus_per_core;
  }

  void validate() const;
};

HardwareConfig load_hw_config(const std::string& path);
HardwareConfig hw_config_from_json_text(const std::string& text);
std::string hw_config_to_json(const HardwareConfig& hw);

// Length-adaptive compilation schedule.
struct BucketSchedule {
  uint32_t prefill_bucket = 64;
  uint32_t decode_bucket = 16;
  uint32_t max_len = 2048;
  bool slr_sharing = true;
  bool channel_merge = true;

  void validate() const;
};

BucketSchedule load_schedule(const std::string& path);
BucketSchedule schedule_from_json_text(const std::string& text);
std::string schedule_to_json(const BucketSchedule& s);

// Known evaluation platform presets.
HardwareConfig u280_config();
HardwareConfig vhk158_config();

}  // namespace flight::hw
