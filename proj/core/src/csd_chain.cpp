#include "flight/csd_chain.hpp"

namespace flight::vpu {

void CSDChainConfig::validate() const {
  if (!groups_per_chain) fail(ErrorKind::Config, "empty chain");
  if (sparse) {
    if (!n || !m || (m & (m - 1)) || n > m || (m % n))
      fail(ErrorKind::Config, "bad N:M selection");
    if (lanes() % (n * n)) fail(ErrorKind::Config, "lanes not divisible into N segments");
    if (window() < m) fail(ErrorKind::Config, "chain too short for the M window");
  }
}

std::pair<int64_t, int64_t> oau_split(int64_t acc, uint32_t width) {
  int64_t mask = (1ll << width) - 1;
  int64_t lsp = acc & mask;
  if (lsp & (1ll << (width - 1))) lsp -= 1ll << width;  // sign extend
  int64_t msp = (acc - lsp) >> width;
  return {msp, lsp};
}

namespace {

// Cascade accumulator. Chains of more than eight DSPs would overflow their
// 18-bit lanes, so the running sum is split at every group boundary and the
// MSP rides to the reduction node.
struct Cascade {
  bool use_oau;
  int64_t lsp = 0;
  int64_t msp = 0;

  void mac(int32_t product) {
    lsp += product;
    if (use_oau) {
      auto [ms, ls] = oau_split(lsp);
      msp += ms;
      lsp = ls;
    }
  }
  int64_t total() const { return (msp << 18) + lsp; }
};

}  // namespace

std::vector<int32_t> vpu_dot(const CSDChainConfig& cfg, std::span<const int8_t> weights,
                             std::span<const int8_t> acts, std::span<const uint8_t> indices) {
  cfg.validate();
  const uint32_t lanes = cfg.lanes();
  if (weights.size() != lanes) fail(ErrorKind::Fault, "weight lane count mismatch");
  bool use_oau = cfg.groups_per_chain * CSDChainConfig::kDspPerGroup > 8;

  std::vector<int32_t> out(cfg.outputs());
  if (!cfg.sparse) {
    if (acts.size() != lanes) fail(ErrorKind::Fault, "activation lane count mismatch");
    Cascade c{use_oau};
    for (uint32_t l = 0; l < lanes; l++)
      c.mac(static_cast<int32_t>(weights[l]) * acts[l]);
    out[0] = static_cast<int32_t>(c.total());
    return out;
  }

  if (acts.size() != cfg.window()) fail(ErrorKind::Fault, "activation window mismatch");
  if (indices.size() != lanes) fail(ErrorKind::Fault, "index lane count mismatch");
  const uint32_t seg_lanes = lanes / cfg.n;
  for (uint32_t s = 0; s < cfg.n; s++) {
    Cascade c{use_oau};
    for (uint32_t l = 0; l < seg_lanes; l++) {
      uint32_t lane = s * seg_lanes + l;
      uint32_t group = l / cfg.n;
      uint8_t idx = indices[lane];
      if (idx >= cfg.m) fail(ErrorKind::Fault, "sparse index out of M range");
      uint32_t pos = group * cfg.m + idx;
      c.mac(static_cast<int32_t>(weights[lane]) * acts[pos]);
    }
    out[s] = static_cast<int32_t>(c.total());
  }
  return out;
}

}  // namespace flight::vpu
