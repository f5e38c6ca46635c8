// Finite-difference check of the full training gradient: composite forward,
// binarization, loss, composite backward, sigmoid chain. The numeric side uses
// only the reference compositor and the naive pair loss from oracles.hpp; the
// library supplies the projection geometry, which carries no gradient.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "binsplat/contrastive.hpp"
#include "binsplat/rasterizer.hpp"
#include "oracles.hpp"

namespace oracle {

struct GradCheckReport {
  int scenes = 0;
  int probes = 0;
  int checked = 0;
  int excluded = 0;  // a clamp / skip / termination branch flipped under +-h
  int failures = 0;
  int nonzero = 0;   // checked probes with a non-negligible gradient
  double max_rel = 0.0;
  double max_base_mismatch = 0.0;  // library vs naive loss at the base point
  std::string first_failure;
};

struct GradCheckOptions {
  double step = 1e-4;
  double rel_tol = 1e-4;
  double abs_floor = 1e-10;
  int max_pixels = 14;
  int feature_probes = 30;
  LevelLayout layout{std::vector<int>{10, 10, 12}};
};

// Adds one scene to `report`; returns false when no usable pixel set exists.
inline bool gradcheck_scene(uint64_t seed, int gaussians, GradCheckReport& report, const GradCheckOptions& opt = {}) {
  CounterRng rng(seed, 77);
  const LevelLayout& layout = opt.layout;
  const int D = layout.total_dims();
  const int L = layout.levels();
  GaussianScene scene = random_scene(rng, gaussians, layout);
  const Camera cam = front_camera(8, 8, 8.0);
  const int roots = 1 + static_cast<int>(rng.uniform_below(3));
  MaskImage img = random_nested_image(rng, 8, 8, L, roots, 2, 0.2);
  const MaskPyramid pyramid = MaskPyramid::build({img}, L);
  const IndivisibleSet indivisible = detect_indivisible(pyramid);
  const auto naive_ind = naive_indivisible({img});
  const LossWeights weights;

  // Base render of every pixel, then a greedy pick of pixels whose level codes
  // are nonzero and pairwise distinct at every level: no pair or VN norm sits
  // on its kink at zero.
  const SplatList base_splats = project(scene, cam);
  const std::vector<PixelCoord> every = all_pixels(8, 8);
  const RenderedFeatureMap full = composite_forward(base_splats, every);
  std::vector<std::size_t> order(every.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_below(static_cast<uint32_t>(i))]);
  std::vector<PixelCoord> chosen;
  std::vector<std::vector<uint32_t>> taken(L);
  for (std::size_t idx : order) {
    if (static_cast<int>(chosen.size()) >= opt.max_pixels) break;
    std::vector<uint32_t> codes(L, 0);
    bool ok = true;
    for (int l = 1; l <= L && ok; ++l) {
      for (int j = 0; j < layout.dims(l); ++j) codes[l - 1] |= static_cast<uint32_t>(full.binary[idx * D + layout.offset(l) + j]) << j;
      ok = codes[l - 1] != 0 && std::find(taken[l - 1].begin(), taken[l - 1].end(), codes[l - 1]) == taken[l - 1].end();
      // stay clear of the 0.5 threshold so the base point is not ambiguous
      for (int j = 0; j < layout.dims(l) && ok; ++j) ok = std::abs(full.features[idx * D + layout.offset(l) + j] - 0.5) > 1e-6;
    }
    if (!ok) continue;
    for (int l = 0; l < L; ++l) taken[l].push_back(codes[l]);
    chosen.push_back(every[idx]);
  }
  if (chosen.size() < 4) return false;

  // Analytic side: exactly the trainer's pipeline.
  RenderedFeatureMap map = composite_forward(base_splats, chosen);
  std::vector<std::size_t> kept;
  const PixelBatch batch = make_batch(map, pyramid, 0, layout, &kept);
  std::vector<double> grad(batch.size() * D, 0.0);
  const LossBreakdown lib = total_loss(batch, indivisible, weights, grad, true);
  for (std::size_t k = 0; k < kept.size(); ++k)
    std::copy(grad.begin() + k * D, grad.begin() + (k + 1) * D, map.grad.begin() + kept[k] * D);
  const SplatGradients analytic = composite_backward(base_splats, map);

  // Numeric side.
  std::vector<uint32_t> labels;
  for (const PixelCoord& px : chosen)
    for (int l = 1; l <= L; ++l) labels.push_back(img.at(l, px.y * 8 + px.x));
  std::vector<double> f0, bits0;
  for (const PixelCoord& px : chosen) {
    const ReferencePixel ref = reference_pixel(base_splats, px);
    for (int j = 0; j < D; ++j) {
      f0.push_back(ref.features[j]);
      bits0.push_back(ref.features[j] > 0.5 ? 1.0 : 0.0);
    }
  }
  auto evaluate = [&](const GaussianScene& s, std::vector<std::vector<int>>* sig) {
    const SplatList splats = project(s, cam);
    std::vector<double> f, fbar;
    for (const PixelCoord& px : chosen) {
      const ReferencePixel ref = reference_pixel(splats, px);
      if (sig) sig->push_back(keyed_signature(splats, ref));
      f.insert(f.end(), ref.features.begin(), ref.features.end());
    }
    fbar.resize(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) fbar[k] = f[k] + (bits0[k] - f0[k]);
    return naive_loss(layout, labels, fbar, f, bits0, naive_ind, weights, true).total;
  };
  std::vector<std::vector<int>> base_sig;
  const double base_total = evaluate(scene, &base_sig);
  report.max_base_mismatch = std::max(report.max_base_mismatch, std::abs(base_total - lib.total));
  for (std::size_t k = 0; k < f0.size(); ++k)
    report.max_base_mismatch = std::max(report.max_base_mismatch, std::abs(f0[k] - map.features[k]));

  auto probe = [&](double& param, double analytic_value, const std::string& what) {
    ++report.probes;
    const double saved = param;
    std::vector<std::vector<int>> sp, sm;
    param = saved + opt.step;
    const double fp = evaluate(scene, &sp);
    param = saved - opt.step;
    const double fm = evaluate(scene, &sm);
    param = saved;
    if (sp != base_sig || sm != base_sig) {
      ++report.excluded;
      return;
    }
    ++report.checked;
    const double numeric = (fp - fm) / (2 * opt.step);
    const double diff = std::abs(numeric - analytic_value);
    const double scale = std::max(std::abs(numeric), std::abs(analytic_value));
    if (scale > 1e-6) ++report.nonzero;
    const double rel = scale > 0 ? diff / scale : 0.0;
    if (diff > opt.abs_floor) report.max_rel = std::max(report.max_rel, rel);
    if (diff > opt.abs_floor && rel > opt.rel_tol) {
      if (report.failures++ == 0) {
        std::ostringstream os;
        os << "seed " << seed << " " << what << ": analytic " << analytic_value << " numeric " << numeric;
        report.first_failure = os.str();
      }
    }
  };
  for (std::size_t i = 0; i < scene.size(); ++i)
    probe(scene[i].opacity_logit, analytic.d_opacity_logit[i], "opacity_logit[" + std::to_string(i) + "]");
  for (int k = 0; k < opt.feature_probes; ++k) {
    const std::size_t i = rng.uniform_below(static_cast<uint32_t>(scene.size()));
    const int j = static_cast<int>(rng.uniform_below(static_cast<uint32_t>(D)));
    probe(scene.features(i)[j], analytic.d_feature_logits[i * D + j],
          "feature_logit[" + std::to_string(i) + "][" + std::to_string(j) + "]");
  }
  ++report.scenes;
  return true;
}

}  // namespace oracle
