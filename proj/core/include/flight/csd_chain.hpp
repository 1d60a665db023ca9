#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flight/error.hpp"

namespace flight::vpu {

// Configurable sparse DSP chain. A chain is a cascade of DSP groups, two
// dual-MAC DSPs per group, so each group commits four int8 products per
// cycle. In dense mode the whole chain reduces to one output. In N:M mode
// reduction nodes split the chain into N segments, each owning one output
// row: a segment's lanes hold that row's kept values, N lanes per M-wide
// activation group, and the sparse mux picks each lane's activation by a
// 4-bit index.
struct CSDChainConfig {
  uint32_t groups_per_chain = 0;
  bool sparse = false;
  uint32_t n = 0;  // N:M selection, valid when sparse
  uint32_t m = 0;

  static constexpr uint32_t kDspPerGroup = 2;
  static constexpr uint32_t kMacsPerDsp = 2;

  uint32_t lanes() const { return groups_per_chain * kDspPerGroup * kMacsPerDsp; }
  uint32_t outputs() const { return sparse ? n : 1; }
  // shared activation window in elements
  uint32_t window() const {
    return sparse ? lanes() * m / (n * n) : lanes();
  }
  void validate() const;
};

// Two's-complement MSP/LSP split: msp * 2^width + lsp == acc, lsp sign
// extended from the low `width` bits. Cascades longer than eight DSPs route
// their running sums through this to stay exact in 18-bit lanes.
std::pair<int64_t, int64_t> oau_split(int64_t acc, uint32_t width = 18);

// Exact dot products of the chain. Dense: weights/acts hold lanes() values
// each, result is the full dot. N:M: weights hold the kept values segment by
// segment, indices the in-group positions, acts the shared window.
std::vector<int32_t> vpu_dot(const CSDChainConfig& cfg, std::span<const int8_t> weights,
                             std::span<const int8_t> acts, std::span<const uint8_t> indices);

}  // namespace flight::vpu
