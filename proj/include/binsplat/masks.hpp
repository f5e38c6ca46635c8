#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "binsplat/layout.hpp"

namespace binsplat {

/// Raw per-view label grids as stored in a BGM1 file. 0 = unlabeled.
struct MaskImage {
  uint32_t width = 0;
  uint32_t height = 0;
  std::vector<std::vector<uint32_t>> levels;  // levels[l - 1][y * width + x]

  int level_count() const { return static_cast<int>(levels.size()); }
  uint32_t at(int level, uint32_t pixel) const { return levels[level - 1][pixel]; }
};

/// One view of a validated pyramid, plus the indices the sampler needs.
struct ViewMasks {
  MaskImage labels;
  // Per level: mask id -> pixel count.
  std::vector<std::map<uint32_t, uint32_t>> registry;
  // Per level (entry 0 unused): child id -> parent id at the previous level.
  std::vector<std::map<uint32_t, uint32_t>> parent;
  // Pixels with a nonzero level-1 label, row-major order.
  std::vector<uint32_t> labeled_pixels;
  // Finest-level masks: (id, pixels) sorted by id.
  std::vector<std::pair<uint32_t, std::vector<uint32_t>>> finest_masks;
};

/// Per-view hierarchical masks with validated nesting: for l >= 2 every
/// level-l mask lies inside exactly one level-(l-1) mask and every pixel
/// labeled at l is labeled at all coarser levels.
class MaskPyramid {
 public:
  MaskPyramid() = default;

  /// Validates and indexes `views`; throws ValidationError naming the first
  /// offending (view, pixel, level) on a nesting violation.
  static MaskPyramid build(std::vector<MaskImage> views, int levels);

  int levels() const { return levels_; }
  std::size_t view_count() const { return views_.size(); }
  const ViewMasks& view(std::size_t v) const { return views_[v]; }
  uint32_t label(std::size_t v, int level, uint32_t pixel) const { return views_[v].labels.at(level, pixel); }

 private:
  int levels_ = 0;
  std::vector<ViewMasks> views_;
};

/// Reads one BGM1 file per view and validates nesting.
MaskPyramid load_masks(const std::vector<std::string>& paths, const LevelLayout& layout);

/// Splits every level-l mask by intersection with level-(l-1) masks. New ids
/// are assigned per level from 1 in lexicographic (parent id, original id)
/// order across all views. Pixels labeled at l but not at l-1 become
/// unlabeled at l. Level 1 is left untouched.
std::vector<MaskImage> enforce_nesting(std::vector<MaskImage> raw);

}  // namespace binsplat
