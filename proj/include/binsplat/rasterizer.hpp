#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "binsplat/layout.hpp"
#include "binsplat/masks.hpp"
#include "binsplat/scene.hpp"

namespace binsplat {

// Compositing constants shared by every renderer in the project.
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kCovarianceBlur = 0.3;
inline constexpr int kTileSize = 16;

struct PixelCoord {
  uint32_t x = 0;
  uint32_t y = 0;
  bool operator==(const PixelCoord&) const = default;
};

std::vector<PixelCoord> all_pixels(int width, int height);

struct Splat {
  uint32_t gaussian = 0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();  // pixels
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d conic = Eigen::Matrix2d::Identity();  // cov^-1
  double depth = 0.0;
  double opacity = 0.0;
  // Inclusive pixel rectangle outside of which alpha < kAlphaMin.
  int min_x = 0, min_y = 0, max_x = -1, max_y = -1;
};

struct ProjectionStats {
  std::size_t outside_depth = 0;  // behind near plane or beyond far plane
  std::size_t off_image = 0;
  std::size_t degenerate = 0;     // non-invertible screen covariance
  std::size_t transparent = 0;    // opacity too low to ever reach kAlphaMin
};

/// Visible Gaussians in ascending depth order (ties by Gaussian index) with
/// their activated feature vectors.
struct SplatList {
  int width = 0, height = 0, dims = 0;
  std::size_t gaussian_count = 0;
  std::vector<Splat> splats;
  std::vector<double> features;  // splats.size() x dims
  std::vector<double> colors;    // splats.size() x 3
  ProjectionStats stats;

  std::size_t size() const { return splats.size(); }
  std::span<const double> feature(std::size_t s) const {
    return {features.data() + s * dims, static_cast<std::size_t>(dims)};
  }
};

/// EWA projection with sigmoid(feature_logits) as splat features.
SplatList project(const GaussianScene& scene, const Camera& camera);
/// Same geometry, but splat features are the 0/1 bits of each Gaussian's code.
SplatList project(const GaussianScene& scene, const Camera& camera, const CodeTable& codes);

/// Per-tile splat lists in depth order (CSR layout).
struct TileBins {
  int tiles_x = 0, tiles_y = 0;
  std::vector<uint32_t> offsets;  // tiles + 1
  std::vector<uint32_t> entries;  // splat indices
};

TileBins bin_splats(const SplatList& splats);

/// Per-pixel composite result plus the state the backward pass needs.
struct RenderedFeatureMap {
  int dims = 0;
  std::vector<PixelCoord> pixels;
  std::vector<double> features;       // F_p, pixels x dims
  std::vector<uint8_t> binary;        // 1(F_p > 0.5), pixels x dims
  std::vector<double> transmittance;  // final T
  std::vector<uint32_t> stop;         // tile-list position one past the last visited entry
  std::vector<double> grad;           // dLoss/dF_p, pixels x dims
  std::vector<double> color;          // pixels x 3, only when requested

  std::shared_ptr<const TileBins> bins;
  std::size_t splat_count = 0;

  std::size_t size() const { return pixels.size(); }
  std::span<const double> feature(std::size_t p) const {
    return {features.data() + p * dims, static_cast<std::size_t>(dims)};
  }
  std::span<const uint8_t> bits(std::size_t p) const {
    return {binary.data() + p * dims, static_cast<std::size_t>(dims)};
  }
  std::span<double> gradient(std::size_t p) { return {grad.data() + p * dims, static_cast<std::size_t>(dims)}; }
};

/// Front-to-back alpha compositing of splat features at the given pixels,
/// using 16x16 tile bins.
RenderedFeatureMap composite_forward(const SplatList& splats, std::span<const PixelCoord> pixels,
                                     bool with_color = false);

/// Gradients per Gaussian index (size gaussian_count). Geometry is frozen and
/// receives none.
struct SplatGradients {
  int dims = 0;
  std::vector<double> d_features;        // w.r.t. activated features f_i
  std::vector<double> d_feature_logits;  // chained through the sigmoid
  std::vector<double> d_opacity;         // w.r.t. o_i
  std::vector<double> d_opacity_logit;
};

/// Back-to-front sweep over each pixel's visited splats. `map.grad` must be
/// filled and `map` must come from composite_forward on this same list.
SplatGradients composite_backward(const SplatList& splats, const RenderedFeatureMap& map);

/// Full-frame label image (single level BGM1 content) of Class^l per pixel.
/// Pixels with final transmittance > 0.5 get label 0.
MaskImage render_class_map(const GaussianScene& scene, const Camera& camera, const CodeTable& codes, int level);

/// Class ids of an already composited binary feature map, same rule as
/// render_class_map.
std::vector<uint32_t> class_labels(const RenderedFeatureMap& map, const LevelLayout& layout, int level);

}  // namespace binsplat
