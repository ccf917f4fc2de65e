#pragma once

// Detection metrics: greedy matching, P-R curves, 101-point AP, mAP over an
// IoU range, F-scores and the per-class report.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fracdet/decode.hpp"
#include "fracdet/error.hpp"
#include "fracdet/geometry.hpp"

namespace fracdet {

struct GtBox {
  Box box;
  int class_id = 0;
};

struct MatchedDetection {
  double confidence = 0.0;
  bool true_positive = false;
  int class_id = 0;
};

/// TP/FP flags for detections plus ground-truth counts, per class.
struct MatchResult {
  std::vector<MatchedDetection> detections;
  std::vector<std::size_t> gt_count;  // indexed by class id

  std::size_t num_classes() const noexcept { return gt_count.size(); }

  void append(const MatchResult& other) {
    detections.insert(detections.end(), other.detections.begin(), other.detections.end());
    if (gt_count.size() < other.gt_count.size()) gt_count.resize(other.gt_count.size(), 0);
    for (std::size_t c = 0; c < other.gt_count.size(); ++c) gt_count[c] += other.gt_count[c];
  }
};

/// One image. Detections are visited by descending confidence (ties in input
/// order); each takes its best-IoU unmatched same-class ground truth if that
/// IoU reaches `iou_thresh`, else it is a false positive. Output detections
/// keep the input order.
inline MatchResult match_detections(std::span<const Detection> dets, std::span<const GtBox> gts, double iou_thresh,
                                    std::size_t num_classes) {
  MatchResult m;
  m.gt_count.assign(num_classes, 0);
  for (const auto& g : gts) {
    if (g.class_id < 0 || static_cast<std::size_t>(g.class_id) >= num_classes)
      throw InvalidArgument("ground-truth class " + std::to_string(g.class_id) + " outside configured classes");
    ++m.gt_count[static_cast<std::size_t>(g.class_id)];
  }

  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });

  std::vector<bool> used(gts.size(), false);
  std::vector<bool> tp(dets.size(), false);
  for (std::size_t i : order) {
    const auto& d = dets[i];
    double best = -1.0;
    std::size_t best_j = gts.size();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[j] || gts[j].class_id != d.class_id) continue;
      const double u = iou(d.box, gts[j].box);
      if (u > best) {
        best = u;
        best_j = j;
      }
    }
    if (best_j < gts.size() && best >= iou_thresh) {
      used[best_j] = true;
      tp[i] = true;
    }
  }
  m.detections.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].class_id < 0 || static_cast<std::size_t>(dets[i].class_id) >= num_classes)
      throw InvalidArgument("detection class " + std::to_string(dets[i].class_id) + " outside configured classes");
    m.detections.push_back({dets[i].confidence, tp[i], dets[i].class_id});
  }
  return m;
}

struct PRPoint {
  double confidence = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

/// Operating points at every distinct confidence, highest first, so recall
/// is non-decreasing along the curve.
struct PRCurve {
  std::vector<PRPoint> points;
  std::size_t num_gt = 0;
};

/// Precision with the empty-selection convention P = 1.
inline double precision_of(std::size_t tp, std::size_t fp) {
  return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

inline double recall_of(std::size_t tp, std::size_t num_gt) {
  return num_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(num_gt);
}

namespace detail {

inline std::vector<MatchedDetection> class_detections_sorted(const MatchResult& m, int class_id) {
  std::vector<MatchedDetection> v;
  for (const auto& d : m.detections)
    if (d.class_id == class_id) v.push_back(d);
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
  return v;
}

}  // namespace detail

inline PRCurve pr_curve(const MatchResult& m, int class_id) {
  PRCurve c;
  c.num_gt = static_cast<std::size_t>(class_id) < m.gt_count.size() ? m.gt_count[static_cast<std::size_t>(class_id)] : 0;
  const auto dets = detail::class_detections_sorted(m, class_id);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    (dets[i].true_positive ? tp : fp) += 1;
    if (i + 1 == dets.size() || dets[i + 1].confidence != dets[i].confidence)
      c.points.push_back({dets[i].confidence, recall_of(tp, c.num_gt), precision_of(tp, fp)});
  }
  return c;
}

inline constexpr int kRecallSamples = 101;

/// Mean over recall levels r = 0.00, 0.01, ..., 1.00 of the best precision
/// reached at recall >= r (0 when r is never reached).
inline double average_precision(const PRCurve& c) {
  // Envelope from the right: env[i] = max precision over points i..end.
  std::vector<double> env(c.points.size());
  double run = 0.0;
  for (std::size_t i = c.points.size(); i-- > 0;) env[i] = run = std::max(run, c.points[i].precision);
  double sum = 0.0;
  std::size_t j = 0;
  for (int k = 0; k < kRecallSamples; ++k) {
    const double r = k / 100.0;
    while (j < c.points.size() && c.points[j].recall < r) ++j;
    sum += j < c.points.size() ? env[j] : 0.0;
  }
  return sum / kRecallSamples;
}

/// (1 + b^2) p r / (b^2 p + r); 0 when the denominator vanishes.
inline double f_beta(double p, double r, double beta) {
  if (!(beta > 0)) throw InvalidArgument("beta must be positive");
  const double b2 = beta * beta;
  const double den = b2 * p + r;
  return den > 0 ? (1.0 + b2) * p * r / den : 0.0;
}

inline double f1_score(double p, double r) { return f_beta(p, r, 1.0); }

struct F1Point {
  double confidence = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct F1Curve {
  std::vector<F1Point> points;  // descending confidence
  double best_confidence = 0.0;
  double best_f1 = 0.0;
};

namespace detail {

inline F1Curve finalize_f1(std::vector<F1Point> points) {
  F1Curve c;
  c.points = std::move(points);
  for (const auto& p : c.points)
    if (p.f1 > c.best_f1) {
      c.best_f1 = p.f1;
      c.best_confidence = p.confidence;
    }
  if (c.best_f1 == 0.0 && !c.points.empty()) c.best_confidence = c.points.front().confidence;
  return c;
}

/// Precision and recall of one class when accepting detections with
/// confidence >= each threshold (thresholds descending).
inline std::vector<std::pair<double, double>> sweep_class(const MatchResult& m, int class_id,
                                                          std::span<const double> thresholds) {
  const auto dets = class_detections_sorted(m, class_id);
  const std::size_t num_gt = m.gt_count[static_cast<std::size_t>(class_id)];
  std::vector<std::pair<double, double>> out;
  out.reserve(thresholds.size());
  std::size_t i = 0, tp = 0, fp = 0;
  for (double t : thresholds) {
    while (i < dets.size() && dets[i].confidence >= t) (dets[i++].true_positive ? tp : fp) += 1;
    out.emplace_back(precision_of(tp, fp), recall_of(tp, num_gt));
  }
  return out;
}

inline std::vector<double> distinct_confidences(const MatchResult& m, std::optional<int> class_id) {
  std::vector<double> c;
  for (const auto& d : m.detections)
    if (!class_id || d.class_id == *class_id) c.push_back(d.confidence);
  std::sort(c.begin(), c.end(), std::greater<>());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

}  // namespace detail

/// F1 at every distinct confidence of one class.
inline F1Curve f1_curve(const MatchResult& m, int class_id) {
  const auto thresholds = detail::distinct_confidences(m, class_id);
  const auto pr = detail::sweep_class(m, class_id, thresholds);
  std::vector<F1Point> pts;
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    pts.push_back({thresholds[i], pr[i].first, pr[i].second, f1_score(pr[i].first, pr[i].second)});
  return detail::finalize_f1(std::move(pts));
}

/// Classes with at least one ground-truth instance.
inline std::vector<int> present_classes(const MatchResult& m) {
  std::vector<int> out;
  for (std::size_t c = 0; c < m.gt_count.size(); ++c)
    if (m.gt_count[c] > 0) out.push_back(static_cast<int>(c));
  return out;
}

/// Mean-over-classes F1 curve: at every distinct confidence of any class,
/// the F1 of each present class is computed and averaged. The reported
/// precision and recall are the class means at that confidence.
inline F1Curve overall_f1_curve(const MatchResult& m) {
  const auto classes = present_classes(m);
  const auto thresholds = detail::distinct_confidences(m, std::nullopt);
  std::vector<F1Point> pts(thresholds.size());
  for (std::size_t i = 0; i < thresholds.size(); ++i) pts[i].confidence = thresholds[i];
  if (classes.empty()) return detail::finalize_f1(std::move(pts));
  for (int c : classes) {
    const auto pr = detail::sweep_class(m, c, thresholds);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      pts[i].precision += pr[i].first;
      pts[i].recall += pr[i].second;
      pts[i].f1 += f1_score(pr[i].first, pr[i].second);
    }
  }
  const double n = static_cast<double>(classes.size());
  for (auto& p : pts) {
    p.precision /= n;
    p.recall /= n;
    p.f1 /= n;
  }
  return detail::finalize_f1(std::move(pts));
}

/// Mean-over-classes P-R curve at every distinct confidence of any class.
inline PRCurve overall_pr_curve(const MatchResult& m) {
  const auto classes = present_classes(m);
  const auto thresholds = detail::distinct_confidences(m, std::nullopt);
  PRCurve out;
  for (int c : classes) out.num_gt += m.gt_count[static_cast<std::size_t>(c)];
  out.points.resize(thresholds.size());
  for (std::size_t i = 0; i < thresholds.size(); ++i) out.points[i].confidence = thresholds[i];
  if (classes.empty()) return out;
  for (int c : classes) {
    const auto pr = detail::sweep_class(m, c, thresholds);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      out.points[i].precision += pr[i].first;
      out.points[i].recall += pr[i].second;
    }
  }
  for (auto& p : out.points) {
    p.precision /= static_cast<double>(classes.size());
    p.recall /= static_cast<double>(classes.size());
  }
  return out;
}

/// Ground truth and predictions for a set of images, keyed by image id.
using GroundTruthSet = std::map<std::string, std::vector<GtBox>>;
using PredictionSet = std::map<std::string, std::vector<Detection>>;

inline std::vector<double> iou_thresholds(double lo = 0.5, double hi = 0.95, double step = 0.05) {
  if (!(step > 0) || !(lo <= hi)) throw InvalidArgument("IoU range needs lo <= hi and step > 0");
  const auto n = static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = std::round((lo + i * step) * 1e9) / 1e9;
  return t;
}

inline void check_prediction_ids(const PredictionSet& preds, const GroundTruthSet& gts) {
  std::string missing;
  for (const auto& [id, _] : preds)
    if (!gts.count(id)) missing += (missing.empty() ? "" : ", ") + id;
  if (!missing.empty()) throw InvalidArgument("predictions for images without ground truth: " + missing);
}

/// Match every image at one IoU threshold and concatenate in image-id order.
inline MatchResult match_all(const PredictionSet& preds, const GroundTruthSet& gts, double iou_thresh,
                             std::size_t num_classes) {
  check_prediction_ids(preds, gts);
  MatchResult total;
  total.gt_count.assign(num_classes, 0);
  static const std::vector<Detection> kNone;
  for (const auto& [id, g] : gts) {
    const auto it = preds.find(id);
    const auto& d = it == preds.end() ? kNone : it->second;
    total.append(match_detections(d, g, iou_thresh, num_classes));
  }
  return total;
}

struct MapResult {
  std::vector<double> thresholds;
  std::vector<std::vector<double>> class_ap;  // [class][threshold]; empty row for absent classes
  std::vector<double> map_per_threshold;      // mean over present classes
  double map50 = 0.0;                         // at the first threshold
  double map50_95 = 0.0;                      // mean over thresholds
};

/// AP at each IoU threshold in [lo, hi] by `step`, per class, then averaged
/// over classes present in the ground truth.
inline MapResult map_range(const PredictionSet& preds, const GroundTruthSet& gts, std::size_t num_classes,
                           double lo = 0.5, double hi = 0.95, double step = 0.05) {
  MapResult r;
  r.thresholds = iou_thresholds(lo, hi, step);
  r.class_ap.assign(num_classes, {});
  std::vector<int> present;
  for (double t : r.thresholds) {
    const auto m = match_all(preds, gts, t, num_classes);
    present = present_classes(m);
    double sum = 0.0;
    for (int c : present) {
      const double ap = average_precision(pr_curve(m, c));
      r.class_ap[static_cast<std::size_t>(c)].push_back(ap);
      sum += ap;
    }
    r.map_per_threshold.push_back(present.empty() ? 0.0 : sum / static_cast<double>(present.size()));
  }
  if (!present.empty()) {
    r.map50 = r.map_per_threshold.front();
    double sum = 0.0;
    for (int c : present) {
      const auto& row = r.class_ap[static_cast<std::size_t>(c)];
      double s = 0.0;
      for (double v : row) s += v;
      sum += s / static_cast<double>(row.size());
    }
    r.map50_95 = sum / static_cast<double>(present.size());
  }
  return r;
}

struct ClassReport {
  int class_id = 0;
  std::string name;
  bool present = false;  // has ground truth; absent classes are left out of the means
  std::size_t images = 0;
  std::size_t boxes = 0;      // predicted boxes
  std::size_t instances = 0;  // ground-truth boxes
  double precision = 0.0;
  double recall = 0.0;
  double ap50 = 0.0;
  double ap50_95 = 0.0;
  PRCurve pr;
  F1Curve f1;
};

struct EvalReport {
  std::string convention;
  std::vector<ClassReport> classes;
  ClassReport overall;
  double operating_confidence = 0.0;
};

inline constexpr const char* kReportConvention =
    "precision/recall at the confidence maximizing mean F1 over classes; AP = 101-point interpolated "
    "precision envelope; mAP50-95 over IoU 0.50:0.05:0.95; classes without ground truth excluded from means";

/// Full per-class + overall report. Curves use IoU 0.5.
inline EvalReport evaluate(const PredictionSet& preds, const GroundTruthSet& gts,
                           const std::vector<std::string>& class_names) {
  const std::size_t nc = class_names.size();
  if (nc == 0) throw InvalidArgument("class list is empty");
  check_prediction_ids(preds, gts);

  const auto maps = map_range(preds, gts, nc);
  const auto m50 = match_all(preds, gts, 0.5, nc);
  const auto overall_f1 = overall_f1_curve(m50);
  const double op_conf = overall_f1.best_confidence;
  const std::vector<double> op{op_conf};

  EvalReport rep;
  rep.convention = kReportConvention;
  rep.operating_confidence = op_conf;

  std::vector<std::size_t> pred_count(nc, 0);
  for (const auto& d : m50.detections) ++pred_count[static_cast<std::size_t>(d.class_id)];

  std::size_t present_n = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    ClassReport cr;
    cr.class_id = static_cast<int>(c);
    cr.name = class_names[c];
    cr.present = m50.gt_count[c] > 0;
    cr.images = gts.size();
    cr.boxes = pred_count[c];
    cr.instances = m50.gt_count[c];
    cr.pr = pr_curve(m50, cr.class_id);
    cr.f1 = f1_curve(m50, cr.class_id);
    if (cr.present) {
      const auto& row = maps.class_ap[c];
      cr.ap50 = row.front();
      double s = 0.0;
      for (double v : row) s += v;
      cr.ap50_95 = s / static_cast<double>(row.size());
      if (!overall_f1.points.empty()) {
        const auto pr = detail::sweep_class(m50, cr.class_id, op);
        cr.precision = pr[0].first;
        cr.recall = pr[0].second;
      }
      ++present_n;
      rep.overall.precision += cr.precision;
      rep.overall.recall += cr.recall;
    }
    rep.overall.boxes += cr.boxes;
    rep.overall.instances += cr.instances;
    rep.classes.push_back(std::move(cr));
  }
  rep.overall.class_id = -1;
  rep.overall.name = "overall";
  rep.overall.present = present_n > 0;
  rep.overall.images = gts.size();
  if (present_n) {
    rep.overall.precision /= static_cast<double>(present_n);
    rep.overall.recall /= static_cast<double>(present_n);
  }
  rep.overall.ap50 = maps.map50;
  rep.overall.ap50_95 = maps.map50_95;
  rep.overall.pr = overall_pr_curve(m50);
  rep.overall.f1 = overall_f1;
  return rep;
}

}  // namespace fracdet
