#include "binsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binsplat/errors.hpp"
#include "binsplat/parallel.hpp"

namespace binsplat {

std::vector<PixelCoord> all_pixels(int width, int height) {
  std::vector<PixelCoord> out;
  out.reserve(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.push_back({static_cast<uint32_t>(x), static_cast<uint32_t>(y)});
  return out;
}

namespace {

template <class FeatureFn>
SplatList project_impl(const GaussianScene& scene, const Camera& camera, FeatureFn&& fill_features) {
  camera.validate();
  SplatList out;
  out.width = camera.width;
  out.height = camera.height;
  out.dims = scene.dims();
  out.gaussian_count = scene.size();

  std::vector<Splat> visible;
  visible.reserve(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Gaussian& g = scene[i];
    const Eigen::Vector3d pc = camera.to_camera(g.position);
    const double z = pc.z();
    if (!(z > camera.near_clip) || !(z < camera.far_clip)) {
      ++out.stats.outside_depth;
      continue;
    }
    const double o = g.opacity();
    if (!(o >= kAlphaMin)) {
      ++out.stats.transparent;
      continue;
    }

    const Eigen::Matrix3d rot = g.rotation.normalized().toRotationMatrix();
    const Eigen::Vector3d s2 = (2.0 * g.log_scale).array().exp();
    const Eigen::Matrix3d cov3 = rot * s2.asDiagonal() * rot.transpose();

    Eigen::Matrix<double, 2, 3> jac;
    jac << camera.fx / z, 0.0, -camera.fx * pc.x() / (z * z), 0.0, camera.fy / z, -camera.fy * pc.y() / (z * z);
    const Eigen::Matrix<double, 2, 3> t = jac * camera.rotation;
    Eigen::Matrix2d cov = t * cov3 * t.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += kCovarianceBlur;
    cov(1, 1) += kCovarianceBlur;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    if (!(det > 0.0) || !std::isfinite(det)) {
      ++out.stats.degenerate;
      continue;
    }

    Splat s;
    s.gaussian = static_cast<uint32_t>(i);
    s.mean = {camera.fx * pc.x() / z + camera.cx, camera.fy * pc.y() / z + camera.cy};
    s.cov = cov;
    s.conic << cov(1, 1) / det, -cov(0, 1) / det, -cov(0, 1) / det, cov(0, 0) / det;
    s.depth = z;
    s.opacity = o;

    // Axis-aligned extent of the ellipse where o * exp(-q/2) >= kAlphaMin,
    // widened by one pixel.
    const double q_max = 2.0 * std::log(o / kAlphaMin);
    const double hx = std::sqrt(q_max * cov(0, 0)) + 1.0;
    const double hy = std::sqrt(q_max * cov(1, 1)) + 1.0;
    const double lo_x = std::ceil(s.mean.x() - hx - 0.5), hi_x = std::floor(s.mean.x() + hx - 0.5);
    const double lo_y = std::ceil(s.mean.y() - hy - 0.5), hi_y = std::floor(s.mean.y() + hy - 0.5);
    if (hi_x < 0.0 || hi_y < 0.0 || lo_x > camera.width - 1 || lo_y > camera.height - 1 || !std::isfinite(lo_x) ||
        !std::isfinite(lo_y)) {
      ++out.stats.off_image;
      continue;
    }
    s.min_x = static_cast<int>(std::max(0.0, lo_x));
    s.min_y = static_cast<int>(std::max(0.0, lo_y));
    s.max_x = static_cast<int>(std::min<double>(camera.width - 1, hi_x));
    s.max_y = static_cast<int>(std::min<double>(camera.height - 1, hi_y));
    visible.push_back(s);
  }
  std::stable_sort(visible.begin(), visible.end(), [](const Splat& a, const Splat& b) { return a.depth < b.depth; });

  out.splats = std::move(visible);
  out.features.resize(out.splats.size() * out.dims);
  out.colors.resize(out.splats.size() * 3);
  for (std::size_t s = 0; s < out.splats.size(); ++s) {
    const uint32_t g = out.splats[s].gaussian;
    fill_features(g, std::span<double>(out.features.data() + s * out.dims, out.dims));
    for (int c = 0; c < 3; ++c) out.colors[s * 3 + c] = scene[g].color[c];
  }
  return out;
}

}  // namespace

SplatList project(const GaussianScene& scene, const Camera& camera) {
  return project_impl(scene, camera, [&](uint32_t g, std::span<double> f) {
    const auto logits = scene.features(g);
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = logistic(logits[j]);
  });
}

SplatList project(const GaussianScene& scene, const Camera& camera, const CodeTable& codes) {
  require(codes.codes.size() == scene.size(), "project: code table size != scene size");
  require(codes.layout == scene.layout(), "project: code table layout != scene layout");
  return project_impl(scene, camera, [&](uint32_t g, std::span<double> f) {
    const uint32_t code = codes.codes[g];
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = static_cast<double>((code >> j) & 1u);
  });
}

TileBins bin_splats(const SplatList& splats) {
  TileBins bins;
  bins.tiles_x = (splats.width + kTileSize - 1) / kTileSize;
  bins.tiles_y = (splats.height + kTileSize - 1) / kTileSize;
  const std::size_t tiles = static_cast<std::size_t>(bins.tiles_x) * bins.tiles_y;
  std::vector<uint32_t> counts(tiles, 0);
  auto for_tiles = [&](const Splat& s, auto&& fn) {
    for (int ty = s.min_y / kTileSize; ty <= s.max_y / kTileSize; ++ty)
      for (int tx = s.min_x / kTileSize; tx <= s.max_x / kTileSize; ++tx) fn(ty * bins.tiles_x + tx);
  };
  for (const Splat& s : splats.splats) for_tiles(s, [&](int t) { ++counts[t]; });
  bins.offsets.assign(tiles + 1, 0);
  for (std::size_t t = 0; t < tiles; ++t) bins.offsets[t + 1] = bins.offsets[t] + counts[t];
  bins.entries.resize(bins.offsets.back());
  std::vector<uint32_t> cursor(bins.offsets.begin(), bins.offsets.end() - 1);
  for (uint32_t i = 0; i < splats.splats.size(); ++i)
    for_tiles(splats.splats[i], [&](int t) { bins.entries[cursor[t]++] = i; });
  return bins;
}

namespace {

// alpha before the clamp, i.e. o * exp(-q/2) at the pixel center.
inline double raw_alpha(const Splat& s, PixelCoord px) {
  const double dx = px.x + 0.5 - s.mean.x();
  const double dy = px.y + 0.5 - s.mean.y();
  const double power = -0.5 * (s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy + s.conic(1, 1) * dy * dy);
  return s.opacity * std::exp(power);
}

inline bool covers(const Splat& s, PixelCoord px) {
  return static_cast<int>(px.x) >= s.min_x && static_cast<int>(px.x) <= s.max_x &&
         static_cast<int>(px.y) >= s.min_y && static_cast<int>(px.y) <= s.max_y;
}

}  // namespace

RenderedFeatureMap composite_forward(const SplatList& splats, std::span<const PixelCoord> pixels, bool with_color) {
  RenderedFeatureMap map;
  const int d = splats.dims;
  map.dims = d;
  map.pixels.assign(pixels.begin(), pixels.end());
  map.features.assign(pixels.size() * d, 0.0);
  map.binary.assign(pixels.size() * d, 0);
  map.transmittance.assign(pixels.size(), 1.0);
  map.stop.assign(pixels.size(), 0);
  map.grad.assign(pixels.size() * d, 0.0);
  if (with_color) map.color.assign(pixels.size() * 3, 0.0);
  auto bins = std::make_shared<TileBins>(bin_splats(splats));
  map.splat_count = splats.size();

  for (const PixelCoord& px : pixels)
    require(static_cast<int>(px.x) < splats.width && static_cast<int>(px.y) < splats.height,
            "composite_forward: pixel outside the image");

  parallel_for(0, pixels.size(), [&](std::size_t p) {
    const PixelCoord px = pixels[p];
    const std::size_t tile = (px.y / kTileSize) * bins->tiles_x + px.x / kTileSize;
    double* out = map.features.data() + p * d;
    double* rgb = with_color ? map.color.data() + p * 3 : nullptr;
    double t = 1.0;
    uint32_t stop = bins->offsets[tile];
    for (uint32_t k = bins->offsets[tile]; k < bins->offsets[tile + 1]; ++k) {
      const uint32_t si = bins->entries[k];
      const Splat& s = splats.splats[si];
      if (!covers(s, px)) continue;
      const double alpha = std::min(kAlphaMax, raw_alpha(s, px));
      if (alpha < kAlphaMin) continue;
      const double w = alpha * t;
      const double* f = splats.features.data() + static_cast<std::size_t>(si) * d;
      for (int j = 0; j < d; ++j) out[j] += w * f[j];
      if (rgb)
        for (int c = 0; c < 3; ++c) rgb[c] += w * splats.colors[si * 3 + c];
      t *= 1.0 - alpha;
      stop = k + 1;
      if (t < kTransmittanceStop) break;
    }
    map.transmittance[p] = t;
    map.stop[p] = stop;
    for (int j = 0; j < d; ++j) map.binary[p * d + j] = out[j] > 0.5 ? 1 : 0;
  });
  map.bins = std::move(bins);
  return map;
}

SplatGradients composite_backward(const SplatList& splats, const RenderedFeatureMap& map) {
  require(map.bins != nullptr && map.splat_count == splats.size() && map.dims == splats.dims,
          "composite_backward: map was not produced by composite_forward on this splat list");
  require(map.grad.size() == map.pixels.size() * map.dims, "composite_backward: gradient buffer has wrong size");
  const int d = splats.dims;
  const std::size_t n = splats.gaussian_count;
  const TileBins& bins = *map.bins;

  // Fixed pixel chunks with chunk-local accumulators, reduced in chunk order:
  // the summation order never depends on the worker count.
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (map.size() + kChunk - 1) / kChunk;
  struct Partial {
    std::vector<uint32_t> splat;  // splat index per slot, first-touch order
    std::vector<double> values;   // slot x (d + 1): d_features..., d_opacity
  };
  std::vector<Partial> partials(chunks);

  parallel_for(
      0, chunks,
      [&](std::size_t c) {
        Partial& part = partials[c];
        std::vector<int32_t> slot_of(splats.size(), -1);
        std::vector<double> suffix(d);
        const std::size_t end = std::min(map.size(), (c + 1) * kChunk);
        for (std::size_t p = c * kChunk; p < end; ++p) {
          const PixelCoord px = map.pixels[p];
          const std::size_t tile = (px.y / kTileSize) * bins.tiles_x + px.x / kTileSize;
          const double* g = map.grad.data() + p * d;
          std::fill(suffix.begin(), suffix.end(), 0.0);
          double t = map.transmittance[p];
          for (uint32_t k = map.stop[p]; k-- > bins.offsets[tile];) {
            const uint32_t si = bins.entries[k];
            const Splat& s = splats.splats[si];
            if (!covers(s, px)) continue;
            const double raw = raw_alpha(s, px);
            const double alpha = std::min(kAlphaMax, raw);
            if (alpha < kAlphaMin) continue;
            const double t_i = t / (1.0 - alpha);
            const double* f = splats.features.data() + static_cast<std::size_t>(si) * d;

            if (slot_of[si] < 0) {
              slot_of[si] = static_cast<int32_t>(part.splat.size());
              part.splat.push_back(si);
              part.values.resize(part.values.size() + d + 1, 0.0);
            }
            double* acc = part.values.data() + static_cast<std::size_t>(slot_of[si]) * (d + 1);
            double d_alpha = 0.0;
            for (int j = 0; j < d; ++j) {
              acc[j] += g[j] * alpha * t_i;
              d_alpha += g[j] * (f[j] * t_i - suffix[j] / (1.0 - alpha));
              suffix[j] += f[j] * alpha * t_i;
            }
            // d alpha / d o is exp(-q/2) below the clamp and 0 on it.
            if (raw < kAlphaMax) acc[d] += d_alpha * (raw / s.opacity);
            t = t_i;
          }
        }
      },
      1);

  SplatGradients out;
  out.dims = d;
  out.d_features.assign(n * d, 0.0);
  out.d_feature_logits.assign(n * d, 0.0);
  out.d_opacity.assign(n, 0.0);
  out.d_opacity_logit.assign(n, 0.0);
  for (const Partial& part : partials) {
    for (std::size_t k = 0; k < part.splat.size(); ++k) {
      const uint32_t gi = splats.splats[part.splat[k]].gaussian;
      const double* v = part.values.data() + k * (d + 1);
      for (int j = 0; j < d; ++j) out.d_features[gi * d + j] += v[j];
      out.d_opacity[gi] += v[d];
    }
  }
  for (std::size_t s = 0; s < splats.size(); ++s) {
    const uint32_t gi = splats.splats[s].gaussian;
    const double o = splats.splats[s].opacity;
    out.d_opacity_logit[gi] = out.d_opacity[gi] * o * (1.0 - o);
    const double* f = splats.features.data() + s * d;
    for (int j = 0; j < d; ++j) out.d_feature_logits[gi * d + j] = out.d_features[gi * d + j] * f[j] * (1.0 - f[j]);
  }
  return out;
}

std::vector<uint32_t> class_labels(const RenderedFeatureMap& map, const LevelLayout& layout, int level) {
  require(level >= 1 && level <= layout.levels(), "class_labels: level out of range");
  require(map.dims == layout.total_dims(), "class_labels: map dims != layout dims");
  const uint32_t mask = layout.prefix_mask(level);
  std::vector<uint32_t> labels(map.size(), 0);
  for (std::size_t p = 0; p < map.size(); ++p) {
    if (map.transmittance[p] > 0.5) continue;
    uint32_t code = 0;
    const uint8_t* b = map.binary.data() + p * map.dims;
    for (int j = 0; j < map.dims; ++j) code |= static_cast<uint32_t>(b[j]) << j;
    labels[p] = code & mask;
  }
  return labels;
}

MaskImage render_class_map(const GaussianScene& scene, const Camera& camera, const CodeTable& codes, int level) {
  require(level >= 1 && level <= scene.layout().levels(), "render_class_map: level out of range");
  const SplatList splats = project(scene, camera, codes);
  const std::vector<PixelCoord> pixels = all_pixels(camera.width, camera.height);
  const RenderedFeatureMap map = composite_forward(splats, pixels);
  MaskImage out;
  out.width = static_cast<uint32_t>(camera.width);
  out.height = static_cast<uint32_t>(camera.height);
  out.levels.push_back(class_labels(map, scene.layout(), level));
  return out;
}

}  // namespace binsplat
