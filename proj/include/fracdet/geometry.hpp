#pragma once

// Axis-aligned boxes and the IoU family of overlap measures.
//
// Corner form (x1, y1, x2, y2) is canonical; the normalized center form
// only exists at label-file boundaries.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>

#include "fracdet/error.hpp"

namespace fracdet {

template <std::floating_point T>
struct BasicBox {
  T x1{}, y1{}, x2{}, y2{};

  constexpr T width() const noexcept { return x2 - x1; }
  constexpr T height() const noexcept { return y2 - y1; }
  constexpr T area() const noexcept { return width() * height(); }
  constexpr T center_x() const noexcept { return (x1 + x2) / 2; }
  constexpr T center_y() const noexcept { return (y1 + y2) / 2; }

  bool valid() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x2 >= x1 && y2 >= y1;
  }

  friend constexpr bool operator==(const BasicBox&, const BasicBox&) = default;
};

using Box = BasicBox<double>;

/// Center-format box in fractions of the image size (YOLO label carrier).
struct NormBox {
  double cx{}, cy{}, w{}, h{};

  bool valid() const noexcept {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    return unit(cx) && unit(cy) && unit(w) && unit(h);
  }

  friend constexpr bool operator==(const NormBox&, const NormBox&) = default;
};

/// Pieces of the complete-IoU penalty.
struct CiouTerms {
  double iou = 0.0;
  double center_dist_sq = 0.0;
  double enclose_diag_sq = 0.0;
  double aspect_term = 0.0;  // nu
};

/// Floor applied to widths and heights inside arctan(w / h).
inline constexpr double kAspectEps = 1e-7;

template <std::floating_point T>
constexpr T intersection_area(const BasicBox<T>& a, const BasicBox<T>& b) noexcept {
  const T iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const T ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (iw > 0 && ih > 0) ? iw * ih : T{0};
}

/// Intersection over union. Two zero-area boxes have union 0; that case
/// yields 0 rather than NaN.
template <std::floating_point T>
constexpr T iou(const BasicBox<T>& a, const BasicBox<T>& b) noexcept {
  const T inter = intersection_area(a, b);
  const T uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : T{0};
}

/// Smallest box containing both inputs.
template <std::floating_point T>
constexpr BasicBox<T> enclosing(const BasicBox<T>& a, const BasicBox<T>& b) noexcept {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

inline double aspect_angle(double w, double h) noexcept { return std::atan(std::max(w, kAspectEps) / std::max(h, kAspectEps)); }

/// nu = 4/pi^2 * (arctan(w_gt/h_gt) - arctan(w_p/h_p))^2, bounded by [0, 1].
inline double aspect_consistency(const Box& pred, const Box& gt) noexcept {
  const double d = aspect_angle(gt.width(), gt.height()) - aspect_angle(pred.width(), pred.height());
  return 4.0 / (std::numbers::pi * std::numbers::pi) * d * d;
}

inline CiouTerms ciou_terms(const Box& pred, const Box& gt) noexcept {
  CiouTerms t;
  t.iou = iou(pred, gt);
  const double dx = pred.center_x() - gt.center_x();
  const double dy = pred.center_y() - gt.center_y();
  t.center_dist_sq = dx * dx + dy * dy;
  const Box c = enclosing(pred, gt);
  t.enclose_diag_sq = c.width() * c.width() + c.height() * c.height();
  t.aspect_term = aspect_consistency(pred, gt);
  return t;
}

inline void check_image_dims(double img_w, double img_h) {
  if (!(img_w > 0) || !(img_h > 0))
    throw InvalidArgument("image dimensions must be positive, got " + std::to_string(img_w) + "x" +
                          std::to_string(img_h));
}

inline Box norm_to_box(const NormBox& n, double img_w, double img_h) {
  check_image_dims(img_w, img_h);
  return {(n.cx - n.w / 2) * img_w, (n.cy - n.h / 2) * img_h, (n.cx + n.w / 2) * img_w, (n.cy + n.h / 2) * img_h};
}

inline NormBox box_to_norm(const Box& b, double img_w, double img_h) {
  check_image_dims(img_w, img_h);
  return {b.center_x() / img_w, b.center_y() / img_h, b.width() / img_w, b.height() / img_h};
}

/// Clamp a box into [0, w] x [0, h]. Boxes lying outside collapse to zero area.
template <std::floating_point T>
constexpr BasicBox<T> clip(const BasicBox<T>& b, T w, T h) noexcept {
  auto cl = [](T v, T hi) { return std::clamp(v, T{0}, hi); };
  BasicBox<T> r{cl(b.x1, w), cl(b.y1, h), cl(b.x2, w), cl(b.y2, h)};
  r.x2 = std::max(r.x2, r.x1);
  r.y2 = std::max(r.y2, r.y1);
  return r;
}

}  // namespace fracdet
