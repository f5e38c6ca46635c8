#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "binsplat/masks.hpp"
#include "binsplat/rasterizer.hpp"
#include "binsplat/scene.hpp"

namespace binsplat {

enum class SynthFixture {
  Hierarchy,        // nested blob clusters following `tree`
  SemiTransparent,  // thin low-opacity sheet hovering over an opaque ground plane
  SmallMasks,       // one large object surrounded by small ones
};

struct SynthSpec {
  SynthFixture fixture = SynthFixture::Hierarchy;
  // Children per node, level by level in breadth-first order. The default is
  // two coarse objects, each split in two, each split in two again.
  std::vector<std::vector<int>> tree = {{2}, {2, 2}, {2, 2, 2, 2}};
  LevelLayout layout;
  int gaussians_per_leaf = 75;
  int views = 12;
  int width = 64;
  int height = 64;
  double ring_radius = 7.0;
  double elevation_deg = 55.0;
  double fov_deg = 50.0;
  // Hierarchy: height of each leaf blob above the ground, world units.
  double object_height = 0.2;
  double opacity = 0.9;
  // SemiTransparent: photometric opacity of the sheet. Ground truth is
  // rendered with `opacity` instead, the segmentation-relevant value.
  double foreground_opacity = 0.3;
  // SmallMasks: number of small objects.
  int small_objects = 6;
  // Feature logits are zero unless this is positive (then seeded N(0, s^2)).
  double feature_init_std = 0.0;
  uint64_t seed = 0;
};

/// Parses the tree notation "2/2,2/2,2,2,2" (levels separated by '/').
std::vector<std::vector<int>> parse_tree(const std::string& text);
std::string format_tree(const std::vector<std::vector<int>>& tree);
SynthSpec parse_synth_spec(const std::string& text);
SynthSpec load_synth_spec(const std::string& path);

struct TreeNode {
  uint32_t id = 0;  // mask id, unique across levels
  int level = 1;
  uint32_t parent = 0;  // 0 for level-1 nodes
  std::vector<uint32_t> children;
};

struct SynthScene {
  GaussianScene scene;
  std::vector<Camera> cameras;
  std::vector<MaskImage> masks;
  MaskPyramid pyramid;
  std::vector<TreeNode> tree;           // index = id - 1
  std::vector<uint32_t> gaussian_leaf;  // leaf node id per Gaussian
};

/// Deterministic per seed. The SemiTransparent and SmallMasks fixtures build
/// their own tree (one single-child chain per object) and ignore `tree`. Ground-truth labels come from the Gaussian with
/// the largest alpha * T at each pixel; pixels whose final transmittance
/// exceeds 0.5 are unlabeled.
SynthScene generate(const SynthSpec& spec);

std::string format_tree_file(const std::vector<TreeNode>& tree, uint64_t seed);

/// Oracle compositor: every splat globally depth-sorted, no tiles, only the
/// depth window culls. Fills features, binary and transmittance.
RenderedFeatureMap brute_force_render(const GaussianScene& scene, const Camera& camera,
                                      std::span<const PixelCoord> pixels);

struct MaskIoU {
  std::size_t view = 0;
  uint32_t truth = 0;
  uint32_t predicted = 0;  // matched predicted label (meaningless when unmatched)
  bool matched = false;
  uint64_t area = 0;
  double iou = 0.0;
};

struct LevelEval {
  int level = 1;
  double miou = 0.0;         // percent
  double consistency = 0.0;  // percent of labeled pixel pairs, pooled over views
  std::vector<MaskIoU> masks;

  /// Mean IoU (percent) over truth masks whose area is at most `max_area`.
  double miou_below(uint64_t max_area) const;
};

/// Greedy one-to-one matching per view by descending intersection; mIoU is
/// the mean IoU over all (view, truth mask) entries, unmatched ones scoring
/// 0. Only pixels labeled in the truth at this level are scored.
LevelEval eval_miou(const std::vector<MaskImage>& predicted, const MaskPyramid& truth, int level);

struct EvalReport {
  std::vector<LevelEval> levels;
  uint64_t code_bytes = 0;
  double class_map_seconds = 0.0;

  std::string to_table() const;
  std::string to_csv() const;
};

/// Wall-clock comparison of full-frame feature rendering (sigmoid features)
/// and class-map rendering (packed codes) over the first `views` cameras.
struct RenderTiming {
  int views = 0;
  double feature_seconds = 0.0;
  double class_map_seconds = 0.0;
};
RenderTiming time_renders(const GaussianScene& scene, const std::vector<Camera>& cameras, const CodeTable& codes,
                          int views, int level);

}  // namespace binsplat
