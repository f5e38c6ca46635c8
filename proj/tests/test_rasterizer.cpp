#include <doctest.h>

#include <cmath>

#include "binsplat/binary_codec.hpp"
#include "binsplat/errors.hpp"
#include "binsplat/parallel.hpp"
#include "binsplat/rasterizer.hpp"
#include "binsplat/synth.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace binsplat;

namespace {

Gaussian blob(Eigen::Vector3d pos, double sigma, double opacity_logit) {
  Gaussian g;
  g.position = pos;
  g.log_scale = Eigen::Vector3d::Constant(std::log(sigma));
  g.opacity_logit = opacity_logit;
  return g;
}

// Hand-built splat centred on pixel (px, py) with the given opacity and
// covariance, covering the whole image.
Splat centred_splat(uint32_t gaussian, double px, double py, double opacity, double depth, int w, int h) {
  Splat s;
  s.gaussian = gaussian;
  s.mean = {px + 0.5, py + 0.5};
  s.cov = Eigen::Matrix2d::Identity();
  s.conic = Eigen::Matrix2d::Identity();
  s.depth = depth;
  s.opacity = opacity;
  s.min_x = 0;
  s.min_y = 0;
  s.max_x = w - 1;
  s.max_y = h - 1;
  return s;
}

SplatList manual_list(int w, int h, int dims, std::vector<Splat> splats, std::vector<double> features) {
  SplatList list;
  list.width = w;
  list.height = h;
  list.dims = dims;
  list.gaussian_count = splats.size();
  list.splats = std::move(splats);
  list.features = std::move(features);
  list.colors.assign(list.splats.size() * 3, 0.5);
  return list;
}

}  // namespace

TEST_CASE("project: isotropic Gaussian on the optical axis") {
  const double sigma = 0.3, z = 4.0, f = 20.0;
  GaussianScene scene(LevelLayout({2}));
  scene.add(blob({0, 0, z}, sigma, 0.0));
  const Camera cam = oracle::front_camera(32, 32, f);
  const SplatList list = project(scene, cam);
  REQUIRE(list.size() == 1);
  const double expected = std::pow(f * sigma / z, 2) + kCovarianceBlur;
  CHECK(list.splats[0].cov(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(list.splats[0].cov(1, 1) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(list.splats[0].cov(0, 1)) < 1e-12);
  CHECK(list.splats[0].mean.x() == doctest::Approx(16.0));
  CHECK((list.splats[0].conic * list.splats[0].cov - Eigen::Matrix2d::Identity()).norm() < 1e-12);
  CHECK(list.splats[0].depth == z);
}

TEST_CASE("project: culling and depth order") {
  GaussianScene scene(LevelLayout({2}));
  scene.add(blob({0, 0, 2.0}, 0.1, 0.0));
  scene.add(blob({0, 0, -3.0}, 0.1, 0.0));   // behind the camera
  scene.add(blob({0, 0, 1.0}, 0.1, 0.0));
  scene.add(blob({50, 0, 2.0}, 0.01, 0.0));  // far off to the side
  scene.add(blob({0, 0, 1.0}, 0.1, 0.0));    // same depth as #2
  const SplatList list = project(scene, oracle::front_camera(16, 16, 16.0));
  REQUIRE(list.size() == 3);
  CHECK(list.splats[0].gaussian == 2);
  CHECK(list.splats[1].gaussian == 4);
  CHECK(list.splats[2].gaussian == 0);
  CHECK(list.stats.outside_depth == 1);
  CHECK(list.stats.off_image == 1);
  for (std::size_t s = 0; s < list.size(); ++s) {
    CHECK(list.splats[s].depth > 0.1);
    CHECK(list.splats[s].cov.determinant() > 0);
    CHECK((list.splats[s].cov - list.splats[s].cov.transpose()).norm() == 0.0);
  }
}

TEST_CASE("composite_forward: single clamped splat") {
  const SplatList list = manual_list(4, 4, 3, {centred_splat(0, 1, 1, 1.0, 1.0, 4, 4)}, {1, 0, 0});
  const std::vector<PixelCoord> px = {{1, 1}};
  const RenderedFeatureMap map = composite_forward(list, px);
  CHECK(map.features[0] == 0.99);
  CHECK(map.features[1] == 0.0);
  CHECK(map.transmittance[0] == doctest::Approx(0.01));
  CHECK(map.binary[0] == 1);
}

TEST_CASE("composite_forward: two coincident half-opaque splats") {
  const SplatList list =
      manual_list(4, 4, 1, {centred_splat(0, 2, 2, 0.5, 1.0, 4, 4), centred_splat(1, 2, 2, 0.5, 2.0, 4, 4)}, {1, 0});
  const std::vector<PixelCoord> px = {{2, 2}};
  const RenderedFeatureMap map = composite_forward(list, px);
  CHECK(map.features[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(map.binary[0] == 0);  // 0.5 is not above the threshold
  CHECK(map.transmittance[0] == doctest::Approx(0.25));
}

TEST_CASE("composite_forward: uncovered pixel") {
  GaussianScene scene(LevelLayout({3}));
  const SplatList list = project(scene, oracle::front_camera(8, 8, 8));
  const auto pixels = all_pixels(8, 8);
  const RenderedFeatureMap map = composite_forward(list, pixels);
  for (double v : map.features) CHECK(v == 0.0);
  for (double t : map.transmittance) CHECK(t == 1.0);
  CHECK_THROWS_AS(composite_forward(list, std::vector<PixelCoord>{{8, 0}}), ContractViolation);
}

TEST_CASE("composite_forward: termination once transmittance drops below 1e-4") {
  std::vector<Splat> splats;
  std::vector<double> f;
  for (int i = 0; i < 4; ++i) {
    splats.push_back(centred_splat(i, 0, 0, 1.0, 1.0 + i, 2, 2));
    f.push_back(i == 3 ? 1.0 : 0.0);
  }
  const SplatList list = manual_list(2, 2, 1, splats, f);
  const RenderedFeatureMap map = composite_forward(list, std::vector<PixelCoord>{{0, 0}});
  // 0.01^2 = 1e-4 is not below the stop, 0.01^3 is: splat 3 never contributes.
  CHECK(map.features[0] == 0.0);
  CHECK(map.stop[0] == 3);
}

TEST_CASE("composite_backward: single splat") {
  const SplatList list = manual_list(4, 4, 2, {centred_splat(0, 1, 1, 0.6, 1.0, 4, 4)}, {0.3, 0.8});
  RenderedFeatureMap map = composite_forward(list, std::vector<PixelCoord>{{1, 1}});
  map.grad = {1.0, 1.0};
  const SplatGradients g = composite_backward(list, map);
  CHECK(g.d_features[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(g.d_features[1] == doctest::Approx(0.6).epsilon(1e-15));
  // dF/do = f at the centre, summed over both components.
  CHECK(g.d_opacity[0] == doctest::Approx(1.1).epsilon(1e-12));
}

TEST_CASE("composite_backward: clamp gives an exactly zero opacity gradient") {
  const SplatList list = manual_list(4, 4, 1, {centred_splat(0, 1, 1, 0.995, 1.0, 4, 4)}, {0.7});
  RenderedFeatureMap map = composite_forward(list, std::vector<PixelCoord>{{1, 1}});
  map.grad = {1.0};
  const SplatGradients g = composite_backward(list, map);
  CHECK(g.d_opacity[0] == 0.0);
  CHECK(g.d_opacity_logit[0] == 0.0);
  CHECK(g.d_features[0] == doctest::Approx(0.99));
}

TEST_CASE("composite_backward: rejects mismatched forward state") {
  const SplatList list = manual_list(4, 4, 1, {centred_splat(0, 1, 1, 0.5, 1.0, 4, 4)}, {0.7});
  RenderedFeatureMap orphan;
  orphan.dims = 1;
  CHECK_THROWS_AS(composite_backward(list, orphan), ContractViolation);
  const SplatList other = manual_list(4, 4, 1, {}, {});
  RenderedFeatureMap map = composite_forward(other, std::vector<PixelCoord>{{0, 0}});
  CHECK_THROWS_AS(composite_backward(list, map), ContractViolation);
}

TEST_CASE("forward invariants and oracle agreement on random scenes") {
  const LevelLayout layout({5, 5});
  for (uint64_t seed = 0; seed < 10; ++seed) {
    CounterRng rng(seed, 1);
    const GaussianScene scene = oracle::random_scene(rng, 40, layout);
    const Camera cam = oracle::front_camera(24, 20, 20.0);
    const SplatList list = project(scene, cam);
    const auto pixels = all_pixels(cam.width, cam.height);
    const RenderedFeatureMap map = composite_forward(list, pixels);
    const RenderedFeatureMap brute = brute_force_render(scene, cam, pixels);
    for (std::size_t p = 0; p < pixels.size(); ++p) {
      const oracle::ReferencePixel ref = oracle::reference_pixel(list, pixels[p]);
      for (int j = 0; j < map.dims; ++j) {
        const double f = map.features[p * map.dims + j];
        CHECK(f >= 0.0);
        CHECK(f <= 1.0 - map.transmittance[p] + 1e-12);
        REQUIRE(std::abs(f - ref.features[j]) <= 1e-12);
        REQUIRE(std::abs(f - brute.features[p * map.dims + j]) <= 1e-6);
        CHECK(map.binary[p * map.dims + j] == (f > 0.5 ? 1 : 0));
      }
      CHECK(std::abs(map.transmittance[p] - ref.transmittance) <= 1e-12);
    }
  }
}

TEST_CASE("equal-depth splats: output is deterministic and independent of thread count") {
  GaussianScene scene(LevelLayout({4}));
  CounterRng rng(9);
  for (int i = 0; i < 30; ++i) {
    Gaussian g = blob({rng.uniform() - 0.5, rng.uniform() - 0.5, 3.0}, 0.2, 1.0);
    std::vector<double> logits(4);
    for (double& v : logits) v = rng.normal();
    scene.add(g, logits);
  }
  const Camera cam = oracle::front_camera(40, 40, 30);
  const auto pixels = all_pixels(40, 40);
  set_num_threads(1);
  RenderedFeatureMap a = composite_forward(project(scene, cam), pixels);
  set_num_threads(8);
  RenderedFeatureMap b = composite_forward(project(scene, cam), pixels);
  CHECK(a.features == b.features);
  for (auto& v : a.grad) v = 1.0;
  for (auto& v : b.grad) v = 1.0;
  const SplatList list = project(scene, cam);
  RenderedFeatureMap c = composite_forward(list, pixels);
  for (auto& v : c.grad) v = 0.25;
  set_num_threads(1);
  const SplatGradients g1 = composite_backward(list, c);
  set_num_threads(8);
  const SplatGradients g8 = composite_backward(list, c);
  set_num_threads(0);
  CHECK(g1.d_feature_logits == g8.d_feature_logits);
  CHECK(g1.d_opacity_logit == g8.d_opacity_logit);
}

TEST_CASE("analytic gradients match finite differences on 20-Gaussian 8x8 scenes") {
  oracle::GradCheckReport report;
  for (uint64_t seed = 100; report.scenes < 5 && seed < 200; ++seed) oracle::gradcheck_scene(seed, 20, report);
  INFO(report.first_failure);
  CHECK(report.scenes == 5);
  CHECK(report.failures == 0);
  CHECK(report.max_base_mismatch < 1e-10);
  CHECK(report.nonzero > 20);
  CHECK(report.checked > report.probes / 2);
}

TEST_CASE("render_class_map") {
  const LevelLayout layout({3, 2});
  GaussianScene scene(layout);
  for (int i = 0; i < 9; ++i) scene.add(blob({(i % 3 - 1) * 0.6, (i / 3 - 1) * 0.6, 3.0}, 0.4, 6.0));
  const Camera cam = oracle::front_camera(16, 16, 10);
  CodeTable codes{layout, std::vector<uint32_t>(scene.size(), 5u | (2u << 3))};
  const MaskImage l1 = render_class_map(scene, cam, codes, 1);
  const MaskImage l2 = render_class_map(scene, cam, codes, 2);
  int covered = 0;
  for (std::size_t p = 0; p < l1.levels[0].size(); ++p) {
    if (l1.levels[0][p] == 0) continue;
    ++covered;
    CHECK(l1.levels[0][p] == 5u);
    CHECK(l2.levels[0][p] == (5u | (2u << 3)));
  }
  CHECK(covered > 30);
  CHECK_THROWS_AS(render_class_map(scene, cam, codes, 3), ContractViolation);
  CHECK_THROWS_AS(render_class_map(scene, cam, codes, 0), ContractViolation);

  GaussianScene empty(layout);
  const MaskImage blank = render_class_map(empty, cam, CodeTable{layout, {}}, 2);
  for (uint32_t v : blank.levels[0]) CHECK(v == 0u);
}
