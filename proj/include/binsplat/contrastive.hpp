#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "binsplat/layout.hpp"
#include "binsplat/masks.hpp"
#include "binsplat/rasterizer.hpp"

namespace binsplat {

/// Sampled pixels of one view with their mask labels and rendered features.
struct PixelBatch {
  LevelLayout layout;
  std::size_t view = 0;
  std::vector<PixelCoord> pixels;
  std::vector<uint32_t> labels;   // size() x levels, 0 = unlabeled at that level
  std::vector<double> features;   // F_p, size() x dims
  std::vector<uint8_t> binary;    // F̄_p, size() x dims

  std::size_t size() const { return pixels.size(); }
  int levels() const { return layout.levels(); }
  int dims() const { return layout.total_dims(); }
  uint32_t label(std::size_t p, int level) const { return labels[p * levels() + (level - 1)]; }
};

/// Joins rendered pixels with their labels. Pixels unlabeled at level 1 are
/// dropped; `kept` (optional) receives the map index of every kept pixel.
PixelBatch make_batch(const RenderedFeatureMap& map, const MaskPyramid& pyramid, std::size_t view,
                      const LevelLayout& layout, std::vector<std::size_t>* kept = nullptr);

struct LevelTerms {
  double positive = 0.0;          // mean ||F̄_p - F̄_q|| over same-mask pairs
  double negative = 0.0;          // mean D_l - ||F̄_p - F̄_q|| over sibling pairs
  double virtual_negative = 0.0;  // mean ||F̄^l_p|| over pixels of indivisible groups
  uint64_t positive_pairs = 0;
  uint64_t negative_pairs = 0;
  uint64_t skipped_pairs = 0;   // different parents: no constraint at this level
  uint64_t excluded_pairs = 0;  // at least one pixel unlabeled at this level
  uint64_t virtual_negative_pixels = 0;

  double contrastive() const { return positive + negative; }
};

/// Pair loss for one level over all unordered pixel pairs of the batch.
/// Level 1 treats every pair of distinct masks as negative; level l >= 2 only
/// repels pairs that share their level-(l-1) mask. Adds weight * dL/dF̄ into
/// `grad` (batch size x dims), which passes straight through to F_p.
LevelTerms level_loss(const PixelBatch& batch, int level, std::span<double> grad, double weight = 1.0);
LevelTerms level1_loss(const PixelBatch& batch, std::span<double> grad, double weight = 1.0);
LevelTerms levelL_loss(const PixelBatch& batch, int level, std::span<double> grad, double weight = 1.0);

/// (level, parent mask id) pairs whose group has a single child mask across
/// all views. Level 1 uses parent id 0 for the whole image.
using IndivisibleSet = std::set<std::pair<int, uint32_t>>;
IndivisibleSet detect_indivisible(const MaskPyramid& pyramid);

/// Pulls level-l features of indivisible groups toward the all-zero code,
/// away from the all-one virtual negative. Returns the mean ||F̄^l_p||.
double virtual_negative_loss(const PixelBatch& batch, int level, const IndivisibleSet& indivisible,
                             std::span<double> grad, double weight = 1.0, uint64_t* pixel_count = nullptr);

struct LossWeights {
  double reg = 10.0;
  double guiding = 1.0;
  double con = 1.0;
};

struct LossBreakdown {
  std::vector<LevelTerms> levels;
  double regularizer = 0.0;
  double total = 0.0;
};

/// total = (reg_w / 32) * reg + guiding_w * sum VN_l + con_w * sum level_l, with
/// dLoss/dF_p accumulated into `grad`.
LossBreakdown total_loss(const PixelBatch& batch, const IndivisibleSet& indivisible, const LossWeights& weights,
                         std::span<double> grad, bool virtual_negative = true);

}  // namespace binsplat
