#include "binsplat/contrastive.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <tuple>

#include "binsplat/binary_codec.hpp"
#include "binsplat/errors.hpp"

namespace binsplat {

PixelBatch make_batch(const RenderedFeatureMap& map, const MaskPyramid& pyramid, std::size_t view,
                      const LevelLayout& layout, std::vector<std::size_t>* kept) {
  require(view < pyramid.view_count(), "make_batch: view out of range");
  require(pyramid.levels() == layout.levels(), "make_batch: pyramid levels != layout levels");
  require(map.dims == layout.total_dims(), "make_batch: map dims != layout dims");
  const MaskImage& labels = pyramid.view(view).labels;
  PixelBatch batch;
  batch.layout = layout;
  batch.view = view;
  const int d = layout.total_dims();
  const int levels = layout.levels();
  if (kept) kept->clear();
  for (std::size_t p = 0; p < map.size(); ++p) {
    const PixelCoord px = map.pixels[p];
    require(px.x < labels.width && px.y < labels.height, "make_batch: pixel outside the mask image");
    const uint32_t idx = px.y * labels.width + px.x;
    if (labels.at(1, idx) == 0) continue;
    batch.pixels.push_back(px);
    for (int l = 1; l <= levels; ++l) batch.labels.push_back(labels.at(l, idx));
    batch.features.insert(batch.features.end(), map.features.begin() + p * d, map.features.begin() + (p + 1) * d);
    batch.binary.insert(batch.binary.end(), map.binary.begin() + p * d, map.binary.begin() + (p + 1) * d);
    if (kept) kept->push_back(p);
  }
  return batch;
}

namespace {

uint64_t pairs_of(uint64_t n) { return n * (n - 1) / 2; }

struct Group {
  uint32_t parent, mask, code;
  std::vector<uint32_t> members;
};

uint32_t level_code(const PixelBatch& batch, std::size_t p, int offset, int dims) {
  const uint8_t* b = batch.binary.data() + p * batch.dims() + offset;
  uint32_t code = 0;
  for (int j = 0; j < dims; ++j) code |= static_cast<uint32_t>(b[j] != 0) << j;
  return code;
}

}  // namespace

LevelTerms level_loss(const PixelBatch& batch, int level, std::span<double> grad, double weight) {
  const LevelLayout& layout = batch.layout;
  require(level >= 1 && level <= layout.levels(), "level_loss: level out of range");
  require(grad.empty() || grad.size() == batch.size() * batch.dims(), "level_loss: gradient size mismatch");
  const int off = layout.offset(level);
  const int dl = layout.dims(level);

  // Pixels with identical (parent, mask, code) are interchangeable, so pairs
  // are accumulated between groups rather than between pixels.
  std::map<std::tuple<uint32_t, uint32_t, uint32_t>, std::vector<uint32_t>> keyed;
  uint64_t unlabeled = 0;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    const uint32_t mask = batch.label(p, level);
    if (mask == 0) {
      ++unlabeled;
      continue;
    }
    const uint32_t parent = level == 1 ? 0u : batch.label(p, level - 1);
    keyed[{parent, mask, level_code(batch, p, off, dl)}].push_back(static_cast<uint32_t>(p));
  }
  std::vector<Group> groups;
  groups.reserve(keyed.size());
  for (auto& [key, members] : keyed)
    groups.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), std::move(members)});

  LevelTerms terms;
  const uint64_t labeled = batch.size() - unlabeled;
  terms.excluded_pairs = pairs_of(batch.size()) - pairs_of(labeled);

  // Groups sharing a parent are contiguous; only those pairs are constrained.
  std::vector<std::pair<std::size_t, std::size_t>> buckets;
  uint64_t same_parent_pairs = 0;
  for (std::size_t g = 0; g < groups.size();) {
    std::size_t h = g;
    uint64_t count = 0;
    while (h < groups.size() && groups[h].parent == groups[g].parent) count += groups[h++].members.size();
    buckets.emplace_back(g, h);
    same_parent_pairs += pairs_of(count);
    g = h;
  }
  terms.skipped_pairs = pairs_of(labeled) - same_parent_pairs;

  auto distance = [](uint32_t a, uint32_t b) { return std::sqrt(static_cast<double>(std::popcount(a ^ b))); };

  double pos_sum = 0.0, neg_sum = 0.0;
  for (auto [b0, b1] : buckets) {
    for (std::size_t g = b0; g < b1; ++g) {
      const uint64_t ng = groups[g].members.size();
      terms.positive_pairs += pairs_of(ng);  // identical codes, distance 0
      for (std::size_t h = g + 1; h < b1; ++h) {
        const uint64_t pairs = ng * groups[h].members.size();
        const double dist = distance(groups[g].code, groups[h].code);
        if (groups[g].mask == groups[h].mask) {
          terms.positive_pairs += pairs;
          pos_sum += static_cast<double>(pairs) * dist;
        } else {
          terms.negative_pairs += pairs;
          neg_sum += static_cast<double>(pairs) * (dl - dist);
        }
      }
    }
  }
  terms.positive = terms.positive_pairs ? pos_sum / static_cast<double>(terms.positive_pairs) : 0.0;
  terms.negative = terms.negative_pairs ? neg_sum / static_cast<double>(terms.negative_pairs) : 0.0;
  if (grad.empty() || weight == 0.0) return terms;

  // dL/dF̄_p = sum_q c_pq (F̄_p - F̄_q) / ||F̄_p - F̄_q||, with c = +1/P_pos for
  // positives and -1/P_neg for negatives; zero-distance pairs contribute 0.
  const double c_pos = terms.positive_pairs ? 1.0 / static_cast<double>(terms.positive_pairs) : 0.0;
  const double c_neg = terms.negative_pairs ? -1.0 / static_cast<double>(terms.negative_pairs) : 0.0;
  std::vector<double> pull(dl);
  for (auto [b0, b1] : buckets) {
    for (std::size_t g = b0; g < b1; ++g) {
      double total_w = 0.0;
      bool touched = false;
      std::fill(pull.begin(), pull.end(), 0.0);
      for (std::size_t h = b0; h < b1; ++h) {
        if (h == g || groups[h].code == groups[g].code) continue;
        const double c = groups[h].mask == groups[g].mask ? c_pos : c_neg;
        const double w = c * static_cast<double>(groups[h].members.size()) / distance(groups[g].code, groups[h].code);
        total_w += w;
        touched = true;
        for (uint32_t bits = groups[h].code; bits; bits &= bits - 1) pull[std::countr_zero(bits)] += w;
      }
      if (!touched) continue;
      for (int j = 0; j < dl; ++j) {
        const double bit = static_cast<double>((groups[g].code >> j) & 1u);
        const double value = weight * (bit * total_w - pull[j]);
        for (uint32_t p : groups[g].members) grad[static_cast<std::size_t>(p) * batch.dims() + off + j] += value;
      }
    }
  }
  return terms;
}

LevelTerms level1_loss(const PixelBatch& batch, std::span<double> grad, double weight) {
  return level_loss(batch, 1, grad, weight);
}

LevelTerms levelL_loss(const PixelBatch& batch, int level, std::span<double> grad, double weight) {
  require(level >= 2, "levelL_loss: level must be at least 2");
  return level_loss(batch, level, grad, weight);
}

IndivisibleSet detect_indivisible(const MaskPyramid& pyramid) {
  IndivisibleSet out;
  std::set<uint32_t> roots;
  std::map<std::pair<int, uint32_t>, std::set<uint32_t>> children;
  for (std::size_t v = 0; v < pyramid.view_count(); ++v) {
    const ViewMasks& vm = pyramid.view(v);
    for (const auto& [id, count] : vm.registry[0]) roots.insert(id);
    for (int l = 2; l <= pyramid.levels(); ++l)
      for (const auto& [child, parent] : vm.parent[l - 1]) children[{l, parent}].insert(child);
  }
  if (roots.size() == 1) out.insert({1, 0u});
  for (const auto& [key, kids] : children)
    if (kids.size() == 1) out.insert(key);
  return out;
}

double virtual_negative_loss(const PixelBatch& batch, int level, const IndivisibleSet& indivisible,
                             std::span<double> grad, double weight, uint64_t* pixel_count) {
  const LevelLayout& layout = batch.layout;
  require(level >= 1 && level <= layout.levels(), "virtual_negative_loss: level out of range");
  require(grad.empty() || grad.size() == batch.size() * batch.dims(), "virtual_negative_loss: gradient size mismatch");
  const int off = layout.offset(level);
  const int dl = layout.dims(level);
  std::vector<std::size_t> members;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    const uint32_t parent = level == 1 ? 0u : batch.label(p, level - 1);
    if (level > 1 && parent == 0) continue;
    if (indivisible.count({level, parent})) members.push_back(p);
  }
  if (pixel_count) *pixel_count = members.size();
  if (members.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(members.size());
  double sum = 0.0;
  for (std::size_t p : members) {
    const uint8_t* b = batch.binary.data() + p * batch.dims() + off;
    int ones = 0;
    for (int j = 0; j < dl; ++j) ones += b[j] != 0;
    if (ones == 0) continue;
    const double norm = std::sqrt(static_cast<double>(ones));
    sum += norm;
    if (grad.empty()) continue;
    for (int j = 0; j < dl; ++j)
      if (b[j]) grad[p * batch.dims() + off + j] += weight * inv / norm;
  }
  return sum * inv;
}

LossBreakdown total_loss(const PixelBatch& batch, const IndivisibleSet& indivisible, const LossWeights& weights,
                         std::span<double> grad, bool virtual_negative) {
  LossBreakdown out;
  // lambda_reg is spread over the 32 bits of the code word: the pull per bit
  // then does not grow as the layout gets narrower.
  const double reg_weight = weights.reg / LevelLayout::kMaxBits;
  out.regularizer = binary_regularizer(batch.features, batch.dims(), grad, reg_weight);
  double contrastive = 0.0, guiding = 0.0;
  for (int l = 1; l <= batch.levels(); ++l) {
    LevelTerms terms = level_loss(batch, l, grad, weights.con);
    if (virtual_negative)
      terms.virtual_negative =
          virtual_negative_loss(batch, l, indivisible, grad, weights.guiding, &terms.virtual_negative_pixels);
    contrastive += terms.contrastive();
    guiding += terms.virtual_negative;
    out.levels.push_back(terms);
  }
  out.total = reg_weight * out.regularizer + weights.guiding * guiding + weights.con * contrastive;
  return out;
}

}  // namespace binsplat
