#include "binsplat/binary_codec.hpp"

#include "binsplat/errors.hpp"

namespace binsplat {

std::vector<LevelSlice> level_slices(const LevelLayout& layout) {
  std::vector<LevelSlice> out;
  for (int l = 1; l <= layout.levels(); ++l) out.push_back({l, layout.offset(l), layout.prefix_dims(l)});
  return out;
}

void ste_binarize(std::span<const double> features, std::span<uint8_t> out) {
  require(features.size() == out.size(), "ste_binarize: size mismatch");
  for (std::size_t j = 0; j < features.size(); ++j) out[j] = features[j] > 0.5 ? 1 : 0;
}

void ste_backward(std::span<const double> upstream, std::span<double> downstream) {
  require(upstream.size() == downstream.size(), "ste_backward: size mismatch");
  for (std::size_t j = 0; j < upstream.size(); ++j) downstream[j] += upstream[j];
}

double binary_regularizer(std::span<const double> features, int dims, std::span<double> grad, double weight) {
  require(dims > 0 && features.size() % dims == 0, "binary_regularizer: features not a multiple of dims");
  require(grad.empty() || grad.size() == features.size(), "binary_regularizer: gradient size mismatch");
  const std::size_t pixels = features.size() / dims;
  if (pixels == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(pixels);
  double sum = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double target = features[i] > 0.5 ? 1.0 : 0.0;
    const double diff = features[i] - target;
    sum += diff * diff;
    if (!grad.empty()) grad[i] += weight * 2.0 * diff * inv;
  }
  return sum * inv;
}

CodeTable extract_codes(const GaussianScene& scene) {
  CodeTable table{scene.layout(), std::vector<uint32_t>(scene.size(), 0)};
  const int d = scene.dims();
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto logits = scene.features(i);
    uint32_t code = 0;
    for (int j = 0; j < d; ++j)
      if (logistic(logits[j]) > 0.5) code |= 1u << j;
    table.codes[i] = code;
  }
  return table;
}

std::vector<uint32_t> select_gaussians(const CodeTable& table, int level, uint32_t class_value) {
  require(level >= 1 && level <= table.layout.levels(), "select_gaussians: level out of range");
  const uint32_t mask = table.layout.prefix_mask(level);
  require((class_value & ~mask) == 0, "select_gaussians: class value wider than the level prefix");
  std::vector<uint32_t> out;
  for (std::size_t i = 0; i < table.codes.size(); ++i)
    if ((table.codes[i] & mask) == class_value) out.push_back(static_cast<uint32_t>(i));
  return out;
}

}  // namespace binsplat
