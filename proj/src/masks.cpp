#include "binsplat/masks.hpp"

#include <algorithm>
#include <sstream>

#include "binsplat/errors.hpp"
#include "binsplat/io.hpp"

namespace binsplat {
namespace {

[[noreturn]] void nesting_error(std::size_t view, const MaskImage& m, uint32_t pixel, int level,
                                const std::string& why) {
  std::ostringstream msg;
  msg << "mask nesting violated at view " << view << ", pixel (" << pixel % m.width << ", " << pixel / m.width
      << "), level " << level << ": " << why;
  throw ValidationError(msg.str());
}

}  // namespace

MaskPyramid MaskPyramid::build(std::vector<MaskImage> views, int levels) {
  require(levels >= 1, "MaskPyramid needs at least one level");
  MaskPyramid out;
  out.levels_ = levels;
  out.views_.reserve(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    MaskImage& m = views[v];
    const std::size_t pixels = static_cast<std::size_t>(m.width) * m.height;
    if (m.level_count() != levels)
      throw FormatError("view " + std::to_string(v) + " has " + std::to_string(m.level_count()) +
                        " mask levels, expected " + std::to_string(levels));
    for (const auto& grid : m.levels)
      if (grid.size() != pixels) throw FormatError("view " + std::to_string(v) + ": grid size != width * height");

    ViewMasks vm;
    vm.registry.resize(levels);
    vm.parent.resize(levels);
    for (int l = 1; l <= levels; ++l) {
      auto& registry = vm.registry[l - 1];
      auto& parent = vm.parent[l - 1];
      for (uint32_t p = 0; p < pixels; ++p) {
        const uint32_t id = m.at(l, p);
        if (id == 0) continue;
        ++registry[id];
        if (l == 1) continue;
        const uint32_t up = m.at(l - 1, p);
        if (up == 0) nesting_error(v, m, p, l, "labeled pixel is unlabeled at the coarser level");
        const auto [it, inserted] = parent.emplace(id, up);
        if (!inserted && it->second != up)
          nesting_error(v, m, p, l,
                        "mask " + std::to_string(id) + " spans coarser masks " + std::to_string(it->second) +
                            " and " + std::to_string(up));
      }
    }
    for (uint32_t p = 0; p < pixels; ++p)
      if (m.at(1, p) != 0) vm.labeled_pixels.push_back(p);
    std::map<uint32_t, std::vector<uint32_t>> finest;
    for (uint32_t p = 0; p < pixels; ++p)
      if (const uint32_t id = m.at(levels, p)) finest[id].push_back(p);
    for (auto& [id, px] : finest) vm.finest_masks.emplace_back(id, std::move(px));
    vm.labels = std::move(m);
    out.views_.push_back(std::move(vm));
  }
  return out;
}

MaskPyramid load_masks(const std::vector<std::string>& paths, const LevelLayout& layout) {
  std::vector<MaskImage> views;
  views.reserve(paths.size());
  for (const std::string& path : paths) {
    MaskImage m = read_mask_image(path);
    if (m.level_count() != layout.levels())
      throw FormatError("'" + path + "' has " + std::to_string(m.level_count()) + " levels, layout has " +
                        std::to_string(layout.levels()));
    views.push_back(std::move(m));
  }
  return MaskPyramid::build(std::move(views), layout.levels());
}

std::vector<MaskImage> enforce_nesting(std::vector<MaskImage> raw) {
  if (raw.empty()) return raw;
  const int levels = raw.front().level_count();
  for (const MaskImage& m : raw) require(m.level_count() == levels, "enforce_nesting: views differ in level count");
  for (int l = 2; l <= levels; ++l) {
    std::vector<std::pair<uint32_t, uint32_t>> keys;
    for (const MaskImage& m : raw) {
      const auto& up = m.levels[l - 2];
      const auto& cur = m.levels[l - 1];
      for (std::size_t p = 0; p < cur.size(); ++p)
        if (cur[p] != 0 && up[p] != 0) keys.emplace_back(up[p], cur[p]);
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    for (MaskImage& m : raw) {
      const auto& up = m.levels[l - 2];
      auto& cur = m.levels[l - 1];
      for (std::size_t p = 0; p < cur.size(); ++p) {
        if (cur[p] == 0 || up[p] == 0) {
          cur[p] = 0;
          continue;
        }
        const auto it = std::lower_bound(keys.begin(), keys.end(), std::make_pair(up[p], cur[p]));
        cur[p] = static_cast<uint32_t>(it - keys.begin()) + 1;
      }
    }
  }
  return raw;
}

}  // namespace binsplat
