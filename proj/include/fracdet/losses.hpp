#pragma once

// Training-time objectives of the anchor-free head, each returning its value
// together with the analytic gradient: task-aligned metric, weighted BCE,
// distribution focal loss and complete-IoU loss, plus the task-aligned
// positive-sample assignment.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "fracdet/anchors.hpp"
#include "fracdet/error.hpp"
#include "fracdet/geometry.hpp"

namespace fracdet {

/// Clamp applied wherever a logarithm is taken.
inline constexpr double kLogEps = 1e-7;
inline constexpr int kDefaultRegMax = 16;

struct AlignmentParams {
  double alpha = 0.5;  // exponent on classification score
  double beta = 6.0;   // exponent on IoU

  void validate() const {
    if (!(alpha > 0) || !(beta > 0)) throw InvalidArgument("alignment exponents must be positive");
  }
};

/// Probability mass over integer distance bins 0..reg_max.
class RegDistribution {
 public:
  explicit RegDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.size() < 2) throw InvalidArgument("distribution needs at least two bins");
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("probability outside [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw InvalidArgument("probabilities do not sum to 1");
  }

  std::span<const double> probs() const noexcept { return probs_; }
  int reg_max() const noexcept { return static_cast<int>(probs_.size()) - 1; }

 private:
  std::vector<double> probs_;
};

struct ScalarLoss {
  double loss = 0.0;
  double grad = 0.0;
};

struct DflLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d probs, same length as the input
};

struct BoxLoss {
  double loss = 0.0;
  std::array<double, 4> grad{};  // d loss / d (x1, y1, x2, y2) of the prediction
};

/// t = s^alpha * u^beta.
inline double tal_metric(double score, double iou_value, const AlignmentParams& p = {}) {
  return std::pow(score, p.alpha) * std::pow(iou_value, p.beta);
}

/// -w [y ln x + (1 - y) ln(1 - x)] with x clamped to [eps, 1 - eps].
inline ScalarLoss bce_loss(double x, double y, double w = 1.0) {
  const double xc = std::clamp(x, kLogEps, 1.0 - kLogEps);
  const double loss = -w * (y * std::log(xc) + (1.0 - y) * std::log(1.0 - xc));
  const double grad = (x == xc) ? -w * (y / xc - (1.0 - y) / (1.0 - xc)) : 0.0;
  return {loss, grad};
}

/// Bracketing bins of a continuous target; the top edge maps to (reg_max-1, reg_max).
inline int dfl_left_bin(double y, int reg_max) {
  if (!(y >= 0.0 && y <= reg_max))
    throw InvalidArgument("DFL target " + std::to_string(y) + " outside [0, " + std::to_string(reg_max) + "]");
  return std::min(static_cast<int>(std::floor(y)), reg_max - 1);
}

/// Analytic minimizer of the DFL over the two bracketing bins.
inline std::pair<double, double> dfl_optimal_targets(double y, double y_left, double y_right) {
  const double span = y_right - y_left;
  return {(y_right - y) / span, (y - y_left) / span};
}

/// Distribution focal loss of predicted bin probabilities against target y.
/// Probabilities are clamped at eps before the logarithm; the gradient is zero
/// through a clamped entry.
inline DflLoss dfl_loss(std::span<const double> probs, double y) {
  if (probs.size() < 2) throw InvalidArgument("distribution needs at least two bins");
  const int reg_max = static_cast<int>(probs.size()) - 1;
  const int n = dfl_left_bin(y, reg_max);
  const double w_left = (n + 1) - y;
  const double w_right = y - n;
  const double s_left = std::max(probs[n], kLogEps);
  const double s_right = std::max(probs[n + 1], kLogEps);

  DflLoss out;
  out.loss = -(w_left * std::log(s_left) + w_right * std::log(s_right));
  out.grad.assign(probs.size(), 0.0);
  if (probs[n] >= kLogEps) out.grad[n] = -w_left / s_left;
  if (probs[n + 1] >= kLogEps) out.grad[n + 1] = -w_right / s_right;
  return out;
}

inline DflLoss dfl_loss(const RegDistribution& d, double y) { return dfl_loss(d.probs(), y); }

/// 1 - IoU + rho^2 / c^2 + nu^2 / ((1 - IoU) + nu), with the exact derivative of
/// every term (nu included) with respect to the predicted corners.
inline BoxLoss ciou_loss(const Box& pred, const Box& gt) {
  const double w = pred.width(), h = pred.height();
  const double gw = gt.width(), gh = gt.height();

  // intersection
  const double ix1 = std::max(pred.x1, gt.x1), ix2 = std::min(pred.x2, gt.x2);
  const double iy1 = std::max(pred.y1, gt.y1), iy2 = std::min(pred.y2, gt.y2);
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  const bool overlap = iw > 0 && ih > 0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = w * h + gw * gh - inter;
  const double iou_v = uni > 0 ? inter / uni : 0.0;

  // d iw / d(x1, x2), d ih / d(y1, y2)
  const double diw_dx1 = overlap && pred.x1 >= gt.x1 ? -1.0 : 0.0;
  const double diw_dx2 = overlap && pred.x2 <= gt.x2 ? 1.0 : 0.0;
  const double dih_dy1 = overlap && pred.y1 >= gt.y1 ? -1.0 : 0.0;
  const double dih_dy2 = overlap && pred.y2 <= gt.y2 ? 1.0 : 0.0;

  const std::array<double, 4> d_inter{ih * diw_dx1, iw * dih_dy1, ih * diw_dx2, iw * dih_dy2};
  const std::array<double, 4> d_area{-h, -w, h, w};
  std::array<double, 4> d_iou{};
  if (uni > 0)
    for (int k = 0; k < 4; ++k) d_iou[k] = (d_inter[k] * uni - inter * (d_area[k] - d_inter[k])) / (uni * uni);

  // normalized center distance
  const double cw = std::max(pred.x2, gt.x2) - std::min(pred.x1, gt.x1);
  const double ch = std::max(pred.y2, gt.y2) - std::min(pred.y1, gt.y1);
  const double c2 = cw * cw + ch * ch;
  const double dx = pred.center_x() - gt.center_x();
  const double dy = pred.center_y() - gt.center_y();
  const double rho2 = dx * dx + dy * dy;
  double dist_term = 0.0;
  std::array<double, 4> d_dist{};
  if (c2 > 0) {
    dist_term = rho2 / c2;
    const std::array<double, 4> d_rho2{dx, dy, dx, dy};
    const std::array<double, 4> d_c2{pred.x1 <= gt.x1 ? -2.0 * cw : 0.0, pred.y1 <= gt.y1 ? -2.0 * ch : 0.0,
                                     pred.x2 >= gt.x2 ? 2.0 * cw : 0.0, pred.y2 >= gt.y2 ? 2.0 * ch : 0.0};
    for (int k = 0; k < 4; ++k) d_dist[k] = (d_rho2[k] * c2 - rho2 * d_c2[k]) / (c2 * c2);
  }

  // aspect consistency
  const double wp = std::max(w, kAspectEps), hp = std::max(h, kAspectEps);
  const double angle_diff = aspect_angle(gw, gh) - std::atan(wp / hp);
  const double k_nu = 4.0 / (std::numbers::pi * std::numbers::pi);
  const double nu = k_nu * angle_diff * angle_diff;
  const double r2 = wp * wp + hp * hp;
  const double dtheta_dw = w > kAspectEps ? hp / r2 : 0.0;
  const double dtheta_dh = h > kAspectEps ? -wp / r2 : 0.0;
  const double dnu_dw = -2.0 * k_nu * angle_diff * dtheta_dw;
  const double dnu_dh = -2.0 * k_nu * angle_diff * dtheta_dh;
  const std::array<double, 4> d_nu{-dnu_dw, -dnu_dh, dnu_dw, dnu_dh};

  double aspect = 0.0;
  std::array<double, 4> d_aspect{};
  const double denom = (1.0 - iou_v) + nu;
  if (nu > 0 && denom > 0) {
    aspect = nu * nu / denom;
    for (int k = 0; k < 4; ++k) {
      const double d_denom = d_nu[k] - d_iou[k];
      d_aspect[k] = (2.0 * nu * d_nu[k] * denom - nu * nu * d_denom) / (denom * denom);
    }
  }

  BoxLoss out;
  out.loss = 1.0 - iou_v + dist_term + aspect;
  for (int k = 0; k < 4; ++k) out.grad[k] = -d_iou[k] + d_dist[k] + d_aspect[k];
  return out;
}

struct GroundTruth {
  Box box;
  int class_id = 0;
};

struct AssignmentResult {
  std::vector<std::optional<std::size_t>> assigned_gt;  // per anchor; nullopt = negative
  std::vector<double> alignment;                        // per anchor; 0 for negatives

  std::size_t num_positive() const {
    return static_cast<std::size_t>(std::count_if(assigned_gt.begin(), assigned_gt.end(),
                                                  [](const auto& g) { return g.has_value(); }));
  }
};

inline bool center_inside(const AnchorPoint& a, const Box& b) noexcept {
  const double x = a.px(), y = a.py();
  return x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
}

/// Task-aligned assignment. For every ground truth the anchors whose center
/// lies strictly inside it are ranked by t = s^alpha * u^beta (ties by anchor
/// index) and the best `top_k` become positive. An anchor wanted by several
/// ground truths goes to the one with the highest t (ties: lowest gt index).
///
/// `scores[a][c]` is the predicted probability of class c at anchor a.
inline AssignmentResult assign_targets(std::span<const AnchorPoint> anchors,
                                       std::span<const std::vector<double>> scores, std::span<const Box> pred_boxes,
                                       std::span<const GroundTruth> gts, const AlignmentParams& params = {},
                                       std::size_t top_k = 10) {
  params.validate();
  if (top_k < 1) throw InvalidArgument("top_k must be >= 1");
  if (scores.size() != anchors.size() || pred_boxes.size() != anchors.size())
    throw InvalidArgument("scores and predicted boxes must have one entry per anchor");

  AssignmentResult result;
  result.assigned_gt.assign(anchors.size(), std::nullopt);
  result.alignment.assign(anchors.size(), 0.0);

  for (std::size_t g = 0; g < gts.size(); ++g) {
    const auto& gt = gts[g];
    std::vector<std::pair<double, std::size_t>> candidates;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (!center_inside(anchors[a], gt.box)) continue;
      const auto& row = scores[a];
      if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= row.size())
        throw InvalidArgument("ground-truth class id outside score row");
      candidates.emplace_back(tal_metric(row[static_cast<std::size_t>(gt.class_id)], iou(pred_boxes[a], gt.box), params),
                              a);
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& l, const auto& r) { return l.first > r.first; });
    if (candidates.size() > top_k) candidates.resize(top_k);
    for (const auto& [t, a] : candidates) {
      auto& owner = result.assigned_gt[a];
      if (!owner || t > result.alignment[a]) {
        owner = g;
        result.alignment[a] = t;
      }
    }
  }
  return result;
}

}  // namespace fracdet
