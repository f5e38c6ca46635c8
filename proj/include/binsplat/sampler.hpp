#pragma once

#include <cstdint>
#include <vector>

#include "binsplat/masks.hpp"
#include "binsplat/rasterizer.hpp"
#include "binsplat/rng.hpp"

namespace binsplat {

struct SamplerConfig {
  uint32_t random_pixels = 256;
  uint32_t balanced_pixels = 768;
  uint32_t masks_per_iter = 64;
  // Off: the whole budget is drawn uniformly from labeled pixels.
  bool mask_balanced = true;
  // 0 = all pairs. Otherwise the batch is truncated so that it forms at most
  // this many unordered pairs.
  uint64_t pair_cap = 0;

  static SamplerConfig full_profile() { return {2000, 8000, 64, true, 0}; }
};

/// Uniform labeled pixels plus equal quotas from randomly selected
/// finest-level masks, deduplicated and shuffled. Throws SamplingError when
/// the view has no labeled pixel.
std::vector<PixelCoord> sample_batch(const MaskPyramid& pyramid, std::size_t view, const SamplerConfig& config,
                                     CounterRng& rng);

}  // namespace binsplat
