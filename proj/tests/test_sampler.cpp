#include <doctest.h>

#include <map>
#include <set>

#include "binsplat/errors.hpp"
#include "binsplat/sampler.hpp"

using namespace binsplat;

namespace {

MaskPyramid one_level(uint32_t w, uint32_t h, std::vector<uint32_t> labels) {
  MaskImage m;
  m.width = w;
  m.height = h;
  m.levels = {std::move(labels)};
  return MaskPyramid::build({m}, 1);
}

uint32_t label_at(const MaskPyramid& pyr, PixelCoord p) {
  return pyr.label(0, 1, p.y * pyr.view(0).labels.width + p.x);
}

}  // namespace

TEST_CASE("quota arithmetic: two masks, two pixels each") {
  const MaskPyramid pyr = one_level(4, 2, {1, 1, 1, 1, 2, 2, 2, 2});
  CounterRng rng(1);
  const SamplerConfig cfg{0, 4, 2, true, 0};
  for (int trial = 0; trial < 50; ++trial) {
    const auto batch = sample_batch(pyr, 0, cfg, rng);
    std::map<uint32_t, int> per_mask;
    for (PixelCoord p : batch) ++per_mask[label_at(pyr, p)];
    CHECK(per_mask[1] == 2);
    CHECK(per_mask[2] == 2);
  }
}

TEST_CASE("single-pixel mask is drawn with replacement then deduplicated") {
  const MaskPyramid pyr = one_level(3, 1, {0, 7, 0});
  CounterRng rng(2);
  const auto batch = sample_batch(pyr, 0, SamplerConfig{0, 5, 1, true, 0}, rng);
  REQUIRE(batch.size() == 1);
  CHECK(batch[0] == PixelCoord{1, 0});
}

TEST_CASE("unlabeled view raises a sampling error") {
  const MaskPyramid pyr = one_level(2, 2, {0, 0, 0, 0});
  CounterRng rng(3);
  CHECK_THROWS_AS(sample_batch(pyr, 0, SamplerConfig{}, rng), SamplingError);
  CHECK_THROWS_AS(sample_batch(pyr, 1, SamplerConfig{}, rng), ContractViolation);
}

TEST_CASE("batch invariants over random configurations") {
  std::vector<uint32_t> labels(32 * 32);
  CounterRng fill(4);
  for (auto& v : labels) v = fill.uniform() < 0.2 ? 0 : 1 + fill.uniform_below(9);
  const MaskPyramid pyr = one_level(32, 32, labels);
  CounterRng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    SamplerConfig cfg;
    cfg.random_pixels = rng.uniform_below(300);
    cfg.balanced_pixels = rng.uniform_below(400);
    cfg.masks_per_iter = 1 + rng.uniform_below(12);
    cfg.mask_balanced = trial % 4 != 0;
    const auto batch = sample_batch(pyr, 0, cfg, rng);
    CHECK(batch.size() <= cfg.random_pixels + cfg.balanced_pixels);
    std::set<std::pair<uint32_t, uint32_t>> seen;
    for (PixelCoord p : batch) {
      REQUIRE(label_at(pyr, p) != 0);
      CHECK(seen.insert({p.x, p.y}).second);
    }
    if (cfg.mask_balanced && cfg.balanced_pixels >= cfg.masks_per_iter) {
      std::set<uint32_t> masks;
      for (PixelCoord p : batch) masks.insert(label_at(pyr, p));
      CHECK(masks.size() >= std::min<std::size_t>(cfg.masks_per_iter, 9));
    }
  }
}

TEST_CASE("same seed, same batch") {
  std::vector<uint32_t> labels(16 * 16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = 1 + static_cast<uint32_t>(i % 5);
  const MaskPyramid pyr = one_level(16, 16, labels);
  CounterRng a(9, 3), b(9, 3);
  CHECK(sample_batch(pyr, 0, SamplerConfig{}, a) == sample_batch(pyr, 0, SamplerConfig{}, b));
  CHECK(a.counter() == b.counter());
}

TEST_CASE("pair cap truncates the batch") {
  std::vector<uint32_t> labels(20 * 20, 1);
  const MaskPyramid pyr = one_level(20, 20, labels);
  CounterRng rng(6);
  SamplerConfig cfg{100, 0, 1, true, 45};
  const auto batch = sample_batch(pyr, 0, cfg, rng);
  CHECK(batch.size() == 10);
}

TEST_CASE("balancing raises the sampling share of small masks") {
  // 100x100: one mask covering 90% and ten 1% masks.
  std::vector<uint32_t> labels(100 * 100, 1);
  for (uint32_t k = 0; k < 10; ++k)
    for (uint32_t i = 0; i < 100; ++i) labels[k * 100 + i] = 2 + k;  // rows 0..9
  const MaskPyramid pyr = one_level(100, 100, labels);
  const SamplerConfig cfg{256, 768, 64, true, 0};
  double small = 0, total = 0;
  for (int it = 0; it < 10000; ++it) {
    CounterRng iter_rng(7, static_cast<uint64_t>(it) + 1);
    for (PixelCoord p : sample_batch(pyr, 0, cfg, iter_rng)) {
      total += 1;
      small += label_at(pyr, p) != 1;
    }
  }
  const double share = small / total;
  CHECK(share >= 5 * 0.10);
}
