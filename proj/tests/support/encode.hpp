#pragma once

// Encoder for the raw head layout: builds logits that decode to a chosen
// box, so decoding can be checked against a known answer.

#include <cmath>
#include <vector>

#include "fracdet/anchors.hpp"
#include "fracdet/decode.hpp"
#include "support/oracles.hpp"

namespace encode {

inline constexpr float kOff = -100.0f;  // logit for "no mass here"

inline std::vector<float> empty_head(const std::vector<fracdet::AnchorPoint>& anchors,
                                     const fracdet::HeadLayout& layout) {
  return std::vector<float>(anchors.size() * layout.channels(), kOff);
}

/// Writes bin logits for distance `d` (two-bin mixture whose mean is d) and a
/// class logit at anchor `a`.
inline void place(std::vector<float>& raw, const std::vector<fracdet::AnchorPoint>& anchors,
                  const fracdet::HeadLayout& layout, std::size_t a, const fracdet::Box& input_box, int class_id,
                  float class_logit) {
  const std::size_t n = anchors.size();
  const std::size_t bins = std::size_t(layout.reg_max) + 1;
  const auto& p = anchors[a];
  const double s = p.stride;
  const double dist[4] = {p.cx - input_box.x1 / s, p.cy - input_box.y1 / s, input_box.x2 / s - p.cx,
                          input_box.y2 / s - p.cy};
  for (std::size_t side = 0; side < 4; ++side) {
    const double d = dist[side];
    const std::size_t lo = std::min<std::size_t>(std::size_t(std::floor(d)), bins - 2);
    const double frac = d - double(lo);
    for (std::size_t b = 0; b < bins; ++b) raw[(side * bins + b) * n + a] = kOff;
    raw[(side * bins + lo) * n + a] = frac < 1 ? float(std::log(1 - frac)) : kOff;
    raw[(side * bins + lo + 1) * n + a] = frac > 0 ? float(std::log(frac)) : kOff;
  }
  const std::size_t cls0 = 4 * bins;
  raw[(cls0 + std::size_t(class_id)) * n + a] = class_logit;
}

inline std::vector<float> single_box(const std::vector<fracdet::AnchorPoint>& anchors,
                                     const fracdet::HeadLayout& layout, std::size_t a, const fracdet::Box& input_box,
                                     int class_id, float class_logit) {
  auto raw = empty_head(anchors, layout);
  place(raw, anchors, layout, a, input_box, class_id, class_logit);
  return raw;
}

struct Target {
  std::size_t anchor = 0;
  fracdet::Box box;  // original-image pixels
};

/// A box in the original image that anchor `anchor` can express: its sides
/// lie within reg_max cells of the anchor center and inside the image area
/// of the letterboxed canvas.
inline Target random_target(oracle::Rng& rng, const fracdet::LetterboxTransform& t,
                            const std::vector<fracdet::AnchorPoint>& anchors, int reg_max) {
  const double x_lo = t.pad_x, y_lo = t.pad_y, x_hi = t.pad_x + t.scaled_w(), y_hi = t.pad_y + t.scaled_h();
  while (true) {
    const std::size_t a = std::size_t(rng.integer(0, int(anchors.size()) - 1));
    const auto& p = anchors[a];
    const double s = p.stride;
    double d[4];
    for (double& v : d) v = rng.uniform(0.5, reg_max - 0.01);
    const fracdet::Box lb{(p.cx - d[0]) * s, (p.cy - d[1]) * s, (p.cx + d[2]) * s, (p.cy + d[3]) * s};
    if (lb.x1 < x_lo || lb.y1 < y_lo || lb.x2 > x_hi || lb.y2 > y_hi) continue;
    return {a, {(lb.x1 - t.pad_x) / t.scale, (lb.y1 - t.pad_y) / t.scale, (lb.x2 - t.pad_x) / t.scale,
                (lb.y2 - t.pad_y) / t.scale}};
  }
}

}  // namespace encode
