#include "binsplat/sampler.hpp"

#include <algorithm>

#include "binsplat/errors.hpp"

namespace binsplat {
namespace {

// First k entries of a partial Fisher-Yates shuffle of `pool`.
std::vector<uint32_t> choose_without_replacement(std::vector<uint32_t> pool, std::size_t k, CounterRng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_below(static_cast<uint32_t>(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

std::vector<PixelCoord> sample_batch(const MaskPyramid& pyramid, std::size_t view, const SamplerConfig& config,
                                     CounterRng& rng) {
  require(view < pyramid.view_count(), "sample_batch: view out of range");
  const ViewMasks& vm = pyramid.view(view);
  if (vm.labeled_pixels.empty())
    throw SamplingError("view " + std::to_string(view) + " has no labeled pixels; skip it");

  std::vector<uint32_t> picked;
  if (!config.mask_balanced) {
    picked = choose_without_replacement(vm.labeled_pixels,
                                        static_cast<std::size_t>(config.random_pixels) + config.balanced_pixels, rng);
  } else {
    picked = choose_without_replacement(vm.labeled_pixels, config.random_pixels, rng);
    const std::size_t available = vm.finest_masks.size();
    const std::size_t selected =
        std::min<std::size_t>({config.masks_per_iter, available, static_cast<std::size_t>(config.balanced_pixels)});
    if (selected > 0) {
      std::vector<uint32_t> mask_ids(available);
      for (std::size_t i = 0; i < available; ++i) mask_ids[i] = static_cast<uint32_t>(i);
      const std::vector<uint32_t> chosen = choose_without_replacement(std::move(mask_ids), selected, rng);
      const std::size_t quota = config.balanced_pixels / selected;
      for (uint32_t m : chosen) {
        const std::vector<uint32_t>& pixels = vm.finest_masks[m].second;
        if (pixels.size() >= quota) {
          const auto draw = choose_without_replacement(pixels, quota, rng);
          picked.insert(picked.end(), draw.begin(), draw.end());
        } else {
          for (std::size_t i = 0; i < quota; ++i)
            picked.push_back(pixels[rng.uniform_below(static_cast<uint32_t>(pixels.size()))]);
        }
      }
    }
  }

  std::sort(picked.begin(), picked.end());
  picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
  for (std::size_t i = picked.size(); i > 1; --i) std::swap(picked[i - 1], picked[rng.uniform_below(static_cast<uint32_t>(i))]);

  if (config.pair_cap > 0) {
    std::size_t keep = picked.size();
    while (keep > 1 && static_cast<uint64_t>(keep) * (keep - 1) / 2 > config.pair_cap) --keep;
    picked.resize(keep);
  }

  const uint32_t width = vm.labels.width;
  std::vector<PixelCoord> out;
  out.reserve(picked.size());
  for (uint32_t idx : picked) out.push_back({idx % width, idx / width});
  return out;
}

}  // namespace binsplat
