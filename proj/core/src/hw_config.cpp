#include "flight/hw_config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace flight::hw {

using nlohmann::json;

void HardwareConfig::validate() const {
  if (frequency_mhz <= 0 || hbm_channel_gbps <= 0 || ddr_gbps <= 0)
    fail(ErrorKind::Config, "rates must be positive");
  if (!num_cores || !mpus_per_core || !p_m || !p_k || !p_n)
    fail(ErrorKind::Config, "parallelism fields must be positive");
  if (hbm_channels < kChannelsPerCore * num_cores)
    fail(ErrorKind::Config, "need 8 HBM channels per core");
  if (!hbm_bytes || !ddr_bytes) fail(ErrorKind::Config, "memory sizes must be positive");
  if (!weight_buffer_bytes || !global_buffer_bytes || !activation_buffer_bytes ||
      !index_buffer_bytes)
    fail(ErrorKind::Config, "buffer sizes must be positive");
  if (onchip_rows() > 65536)
    fail(ErrorKind::Config, "on-chip buffers exceed the 16-bit row address space");
}

void BucketSchedule::validate() const {
  if (!prefill_bucket || !decode_bucket || !max_len)
    fail(ErrorKind::Config, "schedule fields must be positive");
  if (max_len % prefill_bucket || max_len % decode_bucket)
    fail(ErrorKind::Config, "buckets must divide max_len");
  if (decode_bucket > prefill_bucket)
    fail(ErrorKind::Config, "decode bucket must not exceed prefill bucket");
  if (prefill_bucket % 16 || decode_bucket % 16)
    fail(ErrorKind::Config, "buckets must be multiples of 16");
}

namespace {

template <typename T>
void opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

HardwareConfig hw_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorKind::Format, std::string("hw config parse: ") + e.what());
  }
  HardwareConfig hw;
  opt(j, "frequency_mhz", hw.frequency_mhz);
  opt(j, "num_cores", hw.num_cores);
  opt(j, "mpus_per_core", hw.mpus_per_core);
  opt(j, "p_m", hw.p_m);
  opt(j, "p_k", hw.p_k);
  opt(j, "p_n", hw.p_n);
  opt(j, "hbm_channels", hw.hbm_channels);
  opt(j, "hbm_channel_gbps", hw.hbm_channel_gbps);
  opt(j, "hbm_bytes", hw.hbm_bytes);
  opt(j, "hbm_latency_cycles", hw.hbm_latency_cycles);
  opt(j, "ddr_gbps", hw.ddr_gbps);
  opt(j, "ddr_bytes", hw.ddr_bytes);
  opt(j, "ddr_latency_cycles", hw.ddr_latency_cycles);
  opt(j, "weight_buffer_bytes", hw.weight_buffer_bytes);
  opt(j, "global_buffer_bytes", hw.global_buffer_bytes);
  opt(j, "activation_buffer_bytes", hw.activation_buffer_bytes);
  opt(j, "index_buffer_bytes", hw.index_buffer_bytes);
  opt(j, "dsp_total", hw.dsp_total);
  opt(j, "uram_total", hw.uram_total);
  opt(j, "bram_total", hw.bram_total);
  opt(j, "uram_width_bits", hw.uram_width_bits);
  opt(j, "activation_width_bits", hw.activation_width_bits);
  opt(j, "sfu_lanes", hw.sfu_lanes);
  opt(j, "sfu_lut_cycles_per_elem", hw.sfu_lut_cycles_per_elem);
  opt(j, "sfu_elem_cycles", hw.sfu_elem_cycles);
  opt(j, "sys_latency_cycles", hw.sys_latency_cycles);
  opt(j, "issue_cycles", hw.issue_cycles);
  opt(j, "remote_bytes_per_cycle", hw.remote_bytes_per_cycle);
  hw.validate();
  return hw;
}

HardwareConfig load_hw_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open hw config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return hw_config_from_json_text(ss.str());
}

std::string hw_config_to_json(const HardwareConfig& hw) {
  json j;
  j["frequency_mhz"] = hw.frequency_mhz;
  j["num_cores"] = hw.num_cores;
  j["mpus_per_core"] = hw.mpus_per_core;
  j["p_m"] = hw.p_m;
  j["p_k"] = hw.p_k;
  j["p_n"] = hw.p_n;
  j["hbm_channels"] = hw.hbm_channels;
  j["hbm_channel_gbps"] = hw.hbm_channel_gbps;
  j["hbm_bytes"] = hw.hbm_bytes;
  j["hbm_latency_cycles"] = hw.hbm_latency_cycles;
  j["ddr_gbps"] = hw.ddr_gbps;
  j["ddr_bytes"] = hw.ddr_bytes;
  j["ddr_latency_cycles"] = hw.ddr_latency_cycles;
  j["weight_buffer_bytes"] = hw.weight_buffer_bytes;
  j["global_buffer_bytes"] = hw.global_buffer_bytes;
  j["activation_buffer_bytes"] = hw.activation_buffer_bytes;
  j["index_buffer_bytes"] = hw.index_buffer_bytes;
  j["dsp_total"] = hw.dsp_total;
  j["uram_total"] = hw.uram_total;
  j["bram_total"] = hw.bram_total;
  j["uram_width_bits"] = hw.uram_width_bits;
  j["activation_width_bits"] = hw.activation_width_bits;
  j["sfu_lanes"] = hw.sfu_lanes;
  j["sfu_lut_cycles_per_elem"] = hw.sfu_lut_cycles_per_elem;
  j["sfu_elem_cycles"] = hw.sfu_elem_cycles;
  j["sys_latency_cycles"] = hw.sys_latency_cycles;
  j["issue_cycles"] = hw.issue_cycles;
  j["remote_bytes_per_cycle"] = hw.remote_bytes_per_cycle;
  return j.dump(2) + "\n";
}

BucketSchedule schedule_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorKind::Format, std::string("schedule parse: ") + e.what());
  }
  BucketSchedule s;
  opt(j, "prefill_bucket", s.prefill_bucket);
  opt(j, "decode_bucket", s.decode_bucket);
  opt(j, "max_len", s.max_len);
  opt(j, "slr_sharing", s.slr_sharing);
  opt(j, "channel_merge", s.channel_merge);
  s.validate();
  return s;
}

BucketSchedule load_schedule(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open schedule " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return schedule_from_json_text(ss.str());
}

std::string schedule_to_json(const BucketSchedule& s) {
  json j;
  j["prefill_bucket"] = s.prefill_bucket;
  j["decode_bucket"] = s.decode_bucket;
  j["max_len"] = s.max_len;
  j["slr_sharing"] = s.slr_sharing;
  j["channel_merge"] = s.channel_merge;
  return j.dump(2) + "\n";
}

HardwareConfig u280_config() { return HardwareConfig{}; }

HardwareConfig vhk158_config() {
  HardwareConfig hw;
  hw.hbm_channels = 32;
  hw.hbm_channel_gbps = 25.6;  // 819 GB/s aggregate
  hw.hbm_bytes = 32ull << 30;
  hw.ddr_gbps = 51.0;
  hw.dsp_total = 7392;
  return hw;
}

}  // namespace flight::hw
