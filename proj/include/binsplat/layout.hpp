#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace binsplat {

/// Granularity schedule: L levels with D_l bits each, D = sum D_l <= 32.
///
/// Levels are 1-based. Level 1 (coarsest) occupies the lowest bits of a packed
/// code, so the class id at level l is the code masked to its low
/// prefix_dims(l) bits.
class LevelLayout {
 public:
  static constexpr int kMaxBits = 32;

  LevelLayout() : LevelLayout(std::vector<int>{8, 12, 12}) {}
  explicit LevelLayout(std::vector<int> level_dims);

  int levels() const { return static_cast<int>(dims_.size()); }
  int total_dims() const { return offsets_.back(); }
  int dims(int level) const;
  int offset(int level) const;
  // Number of bits covering levels 1..level.
  int prefix_dims(int level) const { return offset(level) + dims(level); }
  uint32_t prefix_mask(int level) const;
  const std::vector<int>& level_dims() const { return dims_; }

  std::string to_string() const;  // "8,12,12"
  static LevelLayout parse(const std::string& text);

  bool operator==(const LevelLayout& other) const { return dims_ == other.dims_; }
  bool operator!=(const LevelLayout& other) const { return !(*this == other); }

 private:
  std::vector<int> dims_;
  std::vector<int> offsets_;  // size L + 1
};

/// Bit j of level l lands on integer bit offset(l) + j.
uint32_t pack_code(std::span<const uint8_t> bits, const LevelLayout& layout);
std::vector<uint8_t> unpack_code(uint32_t code, const LevelLayout& layout);

inline uint32_t class_at_level(uint32_t code, const LevelLayout& layout, int level) {
  return code & layout.prefix_mask(level);
}

/// One packed 32-bit integer per Gaussian.
struct CodeTable {
  LevelLayout layout;
  std::vector<uint32_t> codes;
};

}  // namespace binsplat
