#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "binsplat/errors.hpp"
#include "binsplat/layout.hpp"
#include "binsplat/scene.hpp"

namespace binsplat {

struct LevelSlice {
  int level = 1;
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
};

std::vector<LevelSlice> level_slices(const LevelLayout& layout);

/// Forward of the straight-through estimator: out[j] = 1(features[j] > 0.5).
void ste_binarize(std::span<const double> features, std::span<uint8_t> out);
/// Backward: the Jacobian is the identity, so upstream is added unchanged.
void ste_backward(std::span<const double> upstream, std::span<double> downstream);

/// F^{1:l}: the contiguous prefix covering levels 1..l.
template <class T>
std::span<T> slice_prefix(std::span<T> code, const LevelLayout& layout, int level) {
  if (level < 1 || level > layout.levels())
    throw ContractViolation("slice_prefix: level out of range");
  return code.first(static_cast<std::size_t>(layout.prefix_dims(level)));
}

/// ||1(F_p > 0.5) - F_p||^2 averaged over pixels, so the weight does not
/// depend on batch size. `features` is pixels x dims. Adds weight * gradient into `grad` (the indicator is held
/// constant).
double binary_regularizer(std::span<const double> features, int dims, std::span<double> grad, double weight = 1.0);

/// Per Gaussian, thresholds sigmoid(feature_logits) at 0.5 and packs the bits.
CodeTable extract_codes(const GaussianScene& scene);

/// Indices whose level-l class equals class_value. Plain O(N) scan.
std::vector<uint32_t> select_gaussians(const CodeTable& table, int level, uint32_t class_value);

}  // namespace binsplat
