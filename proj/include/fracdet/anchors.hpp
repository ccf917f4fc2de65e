#pragma once

#include <array>
#include <span>
#include <vector>

#include "fracdet/error.hpp"

namespace fracdet {

inline constexpr std::array<int, 3> kDefaultStrides{8, 16, 32};

/// Grid-cell center of one head output column. `cx`, `cy` are in feature-map
/// units (integer + 0.5); multiply by `stride` for input-image pixels.
struct AnchorPoint {
  double cx = 0.5;
  double cy = 0.5;
  int stride = 8;

  constexpr double px() const noexcept { return cx * stride; }
  constexpr double py() const noexcept { return cy * stride; }
};

/// Anchor grid for a square input, strides concatenated in the given order,
/// each grid row-major (y outer, x inner).
inline std::vector<AnchorPoint> make_anchors(int input_size, std::span<const int> strides = kDefaultStrides) {
  if (input_size <= 0 || input_size % 32 != 0)
    throw InvalidArgument("input size must be a positive multiple of 32, got " + std::to_string(input_size));
  std::vector<AnchorPoint> anchors;
  std::size_t total = 0;
  for (int s : strides) {
    if (s <= 0 || input_size % s != 0) throw InvalidArgument("stride " + std::to_string(s) + " does not divide input");
    total += static_cast<std::size_t>(input_size / s) * static_cast<std::size_t>(input_size / s);
  }
  anchors.reserve(total);
  for (int s : strides) {
    const int n = input_size / s;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) anchors.push_back({i + 0.5, j + 0.5, s});
  }
  return anchors;
}

}  // namespace fracdet
