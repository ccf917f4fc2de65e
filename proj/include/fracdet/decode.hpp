#pragma once

// Raw head output -> pixel-space detections.
//
// Raw layout (one image): channel-major planar block of
// C_total = 4*(reg_max+1) + num_classes rows by num_anchors columns.
// Rows [0, 4*(reg_max+1)) hold the left/top/right/bottom bin logits, one
// (reg_max+1)-row group per side in that order; the remaining rows hold
// class logits. Columns follow make_anchors() order (stride 8, 16, 32).

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "fracdet/anchors.hpp"
#include "fracdet/error.hpp"
#include "fracdet/geometry.hpp"

namespace fracdet {

struct LetterboxTransform {
  double scale = 1.0;
  double pad_x = 0.0;
  double pad_y = 0.0;
  int orig_w = 0;
  int orig_h = 0;
  int target = 0;

  /// Size of the resized image before padding.
  int scaled_w() const noexcept { return static_cast<int>(std::lround(orig_w * scale)); }
  int scaled_h() const noexcept { return static_cast<int>(std::lround(orig_h * scale)); }
};

/// Gray level of letterbox padding, matching the exported models' training.
inline constexpr int kLetterboxPadValue = 114;

inline LetterboxTransform letterbox(int orig_w, int orig_h, int target, int stride_multiple = 32) {
  if (orig_w <= 0 || orig_h <= 0 || target <= 0 || stride_multiple <= 0)
    throw InvalidArgument("letterbox dimensions must be positive");
  if (target % stride_multiple != 0)
    throw InvalidArgument("letterbox target " + std::to_string(target) + " is not a multiple of " +
                          std::to_string(stride_multiple));
  LetterboxTransform t;
  t.orig_w = orig_w;
  t.orig_h = orig_h;
  t.target = target;
  t.scale = std::min(static_cast<double>(target) / orig_w, static_cast<double>(target) / orig_h);
  t.pad_x = std::floor((target - t.scaled_w()) / 2.0);
  t.pad_y = std::floor((target - t.scaled_h()) / 2.0);
  return t;
}

/// Original-image box -> letterboxed-input box.
inline Box letterbox_box(const Box& b, const LetterboxTransform& t) noexcept {
  return {b.x1 * t.scale + t.pad_x, b.y1 * t.scale + t.pad_y, b.x2 * t.scale + t.pad_x, b.y2 * t.scale + t.pad_y};
}

/// Letterboxed-input box -> original-image box, clipped to the image. A box
/// lying entirely in the padding comes back with zero area.
inline Box unletterbox(const Box& b, const LetterboxTransform& t) noexcept {
  const Box raw{(b.x1 - t.pad_x) / t.scale, (b.y1 - t.pad_y) / t.scale, (b.x2 - t.pad_x) / t.scale,
                (b.y2 - t.pad_y) / t.scale};
  return clip(raw, static_cast<double>(t.orig_w), static_cast<double>(t.orig_h));
}

inline bool is_degenerate(const Box& b) noexcept { return !(b.area() > 0); }

/// Softmax in place over a span, max-subtracted.
inline void softmax(std::span<double> v) noexcept {
  if (v.empty()) return;
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) sum += (x = std::exp(x - m));
  for (double& x : v) x /= sum;
}

/// Expected bin index under softmax(logits): a distance in [0, reg_max].
template <typename T>
double decode_dfl(std::span<const T> side_logits) {
  if (side_logits.size() < 2) throw InvalidArgument("DFL decoding needs reg_max >= 1");
  std::vector<double> p(side_logits.begin(), side_logits.end());
  softmax(p);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += static_cast<double>(i) * p[i];
  return std::clamp(d, 0.0, static_cast<double>(p.size() - 1));
}

/// Distances to the four sides (feature-map units) around an anchor center.
struct SideDistances {
  double left = 0, top = 0, right = 0, bottom = 0;
};

inline Box dist2box(const AnchorPoint& a, const SideDistances& d) noexcept {
  const double s = a.stride;
  return {(a.cx - d.left) * s, (a.cy - d.top) * s, (a.cx + d.right) * s, (a.cy + d.bottom) * s};
}

/// Inverse of dist2box for a box (input pixels) around the anchor.
inline SideDistances box2dist(const AnchorPoint& a, const Box& b) noexcept {
  const double s = a.stride;
  return {a.cx - b.x1 / s, a.cy - b.y1 / s, b.x2 / s - a.cx, b.y2 / s - a.cy};
}

struct Detection {
  Box box;
  int class_id = 0;
  double confidence = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Sort by confidence descending, ties kept in input order.
inline void sort_by_confidence(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
}

/// Greedy class-aware suppression. A detection survives iff its IoU with every
/// already-kept detection of the same class is below `iou_thresh`.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh, std::size_t max_det = SIZE_MAX) {
  sort_by_confidence(dets);
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    if (kept.size() >= max_det) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) >= iou_thresh;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct HeadLayout {
  int num_classes = 0;
  int reg_max = 16;

  std::size_t channels() const noexcept { return 4 * static_cast<std::size_t>(reg_max + 1) + num_classes; }
  std::size_t class_offset() const noexcept { return 4 * static_cast<std::size_t>(reg_max + 1); }
};

struct DecodeOptions {
  double conf_thresh = 0.25;
  double iou_thresh = 0.45;
  std::size_t max_det = 300;
};

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {

inline std::vector<Detection> finish_decode(std::vector<std::pair<Detection, std::size_t>> candidates,
                                            const LetterboxTransform& t, const DecodeOptions& opt) {
  std::vector<Detection> dets;
  dets.reserve(candidates.size());
  for (auto& [d, anchor] : candidates) {
    d.box = unletterbox(d.box, t);
    if (!is_degenerate(d.box)) dets.push_back(d);
  }
  return nms(std::move(dets), opt.iou_thresh, opt.max_det);
}

}  // namespace detail

/// Decode one image's raw head output into original-image detections.
template <typename T>
std::vector<Detection> decode_all(std::span<const T> raw, std::span<const AnchorPoint> anchors, const HeadLayout& layout,
                                  const LetterboxTransform& t, const DecodeOptions& opt = {}) {
  if (layout.num_classes < 1 || layout.reg_max < 1) throw InvalidArgument("head layout needs classes and reg_max >= 1");
  const std::size_t n = anchors.size();
  const std::size_t expected = n * layout.channels();
  if (raw.size() != expected) throw LayoutError(expected, raw.size());

  const std::size_t bins = static_cast<std::size_t>(layout.reg_max) + 1;
  const std::size_t cls0 = layout.class_offset();
  std::vector<std::pair<Detection, std::size_t>> candidates;
  std::vector<double> side(bins);

  for (std::size_t a = 0; a < n; ++a) {
    int best = 0;
    double best_logit = raw[cls0 * n + a];
    for (int c = 1; c < layout.num_classes; ++c) {
      const double v = raw[(cls0 + static_cast<std::size_t>(c)) * n + a];
      if (v > best_logit) {
        best_logit = v;
        best = c;
      }
    }
    const double conf = sigmoid(best_logit);
    if (conf < opt.conf_thresh) continue;

    std::array<double, 4> dist{};
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t b = 0; b < bins; ++b) side[b] = raw[(s * bins + b) * n + a];
      dist[s] = decode_dfl(std::span<const double>(side));
    }
    Detection d;
    d.box = dist2box(anchors[a], {dist[0], dist[1], dist[2], dist[3]});
    d.class_id = best;
    d.confidence = conf;
    candidates.emplace_back(d, a);
  }
  return detail::finish_decode(std::move(candidates), t, opt);
}

/// Decode an already-post-processed export: 4 + C rows holding
/// (cx, cy, w, h) in input pixels followed by per-class probabilities.
template <typename T>
std::vector<Detection> decode_boxes(std::span<const T> raw, std::size_t num_anchors, int num_classes,
                                    const LetterboxTransform& t, const DecodeOptions& opt = {}) {
  const std::size_t n = num_anchors;
  const std::size_t expected = n * (4 + static_cast<std::size_t>(num_classes));
  if (raw.size() != expected) throw LayoutError(expected, raw.size());
  std::vector<std::pair<Detection, std::size_t>> candidates;
  for (std::size_t a = 0; a < n; ++a) {
    int best = 0;
    double conf = raw[4 * n + a];
    for (int c = 1; c < num_classes; ++c) {
      const double v = raw[(4 + static_cast<std::size_t>(c)) * n + a];
      if (v > conf) {
        conf = v;
        best = c;
      }
    }
    if (conf < opt.conf_thresh) continue;
    const double cx = raw[a], cy = raw[n + a], w = raw[2 * n + a], h = raw[3 * n + a];
    candidates.push_back({Detection{{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, best, conf}, a});
  }
  return detail::finish_decode(std::move(candidates), t, opt);
}

}  // namespace fracdet
