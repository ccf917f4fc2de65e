#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>

namespace fracdet {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// Fixed class -> color map shared by --draw, SVG curves and the UI.
inline constexpr std::array<Rgb, 20> kPalette{{
    {255, 56, 56},  {255, 157, 151}, {255, 112, 31}, {255, 178, 29}, {207, 210, 49},
    {72, 249, 10},  {146, 204, 23},  {61, 219, 134}, {26, 147, 52},  {0, 212, 187},
    {44, 153, 168}, {0, 194, 255},   {52, 69, 147},  {100, 115, 255}, {0, 24, 236},
    {132, 56, 255}, {82, 0, 133},    {203, 56, 255}, {255, 149, 200}, {255, 55, 199},
}};

inline Rgb class_color(int class_id) {
  const auto n = static_cast<int>(kPalette.size());
  return kPalette[static_cast<std::size_t>(((class_id % n) + n) % n)];
}

inline std::string to_hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

}  // namespace fracdet
