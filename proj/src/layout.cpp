#include "binsplat/layout.hpp"

#include <sstream>
#include <stdexcept>

#include "binsplat/errors.hpp"

namespace binsplat {

LevelLayout::LevelLayout(std::vector<int> level_dims) : dims_(std::move(level_dims)) {
  if (dims_.empty()) throw std::invalid_argument("layout needs at least one level");
  if (dims_.size() > 255) throw std::invalid_argument("layout has more than 255 levels");
  offsets_.assign(1, 0);
  for (int d : dims_) {
    if (d < 1) throw std::invalid_argument("every level needs at least one bit");
    offsets_.push_back(offsets_.back() + d);
  }
  if (offsets_.back() > kMaxBits)
    throw std::invalid_argument("layout uses " + std::to_string(offsets_.back()) + " bits, limit is 32");
}

int LevelLayout::dims(int level) const {
  require(level >= 1 && level <= levels(), "level out of range");
  return dims_[level - 1];
}

int LevelLayout::offset(int level) const {
  require(level >= 1 && level <= levels(), "level out of range");
  return offsets_[level - 1];
}

uint32_t LevelLayout::prefix_mask(int level) const {
  const int bits = prefix_dims(level);
  return bits >= 32 ? 0xFFFFFFFFu : ((1u << bits) - 1u);
}

std::string LevelLayout::to_string() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < dims_.size(); ++i) out << (i ? "," : "") << dims_[i];
  return out.str();
}

LevelLayout LevelLayout::parse(const std::string& text) {
  std::vector<int> dims;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad level list '" + text + "'");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos)
      throw std::invalid_argument("bad level list '" + text + "'");
    dims.push_back(value);
  }
  return LevelLayout(std::move(dims));
}

uint32_t pack_code(std::span<const uint8_t> bits, const LevelLayout& layout) {
  require(bits.size() == static_cast<std::size_t>(layout.total_dims()), "pack_code: bit vector length != D");
  uint32_t code = 0;
  for (std::size_t j = 0; j < bits.size(); ++j) {
    if (bits[j]) code |= (1u << j);
  }
  return code;
}

std::vector<uint8_t> unpack_code(uint32_t code, const LevelLayout& layout) {
  const int d = layout.total_dims();
  require(d == 32 || (code >> d) == 0, "unpack_code: code has bits above D");
  std::vector<uint8_t> bits(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) bits[j] = static_cast<uint8_t>((code >> j) & 1u);
  return bits;
}

}  // namespace binsplat
