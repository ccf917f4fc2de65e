#pragma once

// Reading evaluation inputs from disk and rendering EvalReport as JSON, a
// fixed-width table, CSV curves and SVG plots.

#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fracdet/dataset.hpp"
#include "fracdet/evaluation.hpp"
#include "fracdet/palette.hpp"
#include "fracdet/predict_result.hpp"

namespace fracdet {

/// Parse "class conf cx cy w h" lines (normalized coordinates) into
/// detections in the unit image frame.
inline std::vector<Detection> parse_prediction_file(std::string_view text, std::size_t num_classes = 0) {
  std::vector<Detection> out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto f = detail::split_ws(line);
    if (f.empty()) return;
    if (f.size() != 6)
      throw ParseError("expected 6 fields \"class conf cx cy w h\", got " + std::to_string(f.size()), line_no);
    const auto cls = detail::parse_int(f[0]);
    if (!cls || *cls < 0 || (num_classes && static_cast<std::size_t>(*cls) >= num_classes))
      throw ParseError("class: invalid value", line_no);
    static constexpr const char* kNames[] = {"conf", "cx", "cy", "w", "h"};
    double v[5];
    for (int k = 0; k < 5; ++k) {
      const auto d = detail::parse_double(f[static_cast<std::size_t>(k) + 1]);
      if (!d || *d < 0.0 || *d > 1.0) throw ParseError(std::string(kNames[k]) + ": expected a value in [0, 1]", line_no);
      v[k] = *d;
    }
    out.push_back({norm_to_box({v[1], v[2], v[3], v[4]}, 1.0, 1.0), static_cast<int>(*cls), v[0]});
  });
  return out;
}

inline std::string format_prediction_file(const std::vector<Detection>& dets, int img_w, int img_h) {
  std::string out;
  for (const auto& d : dets) {
    const auto n = box_to_norm(d.box, img_w, img_h);
    out += std::to_string(d.class_id);
    for (double v : {d.confidence, n.cx, n.cy, n.w, n.h}) out += ' ' + detail::format_double(v);
    out += '\n';
  }
  return out;
}

inline std::vector<GtBox> labels_to_gt(const std::vector<LabelRecord>& labels) {
  std::vector<GtBox> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back({norm_to_box(l.box, 1.0, 1.0), l.class_id});
  return out;
}

/// Ground truth from a directory of YOLO label files, keyed by stem.
inline GroundTruthSet load_ground_truth_dir(const std::filesystem::path& dir, std::size_t num_classes) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw MissingFileError(dir.string());
  GroundTruthSet gts;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".txt") continue;
    try {
      gts[e.path().stem().string()] = labels_to_gt(parse_label_file(detail::read_file(e.path()), num_classes));
    } catch (const ParseError& err) {
      throw ParseError(e.path().string() + ": " + err.what());
    }
  }
  return gts;
}

/// Predictions from a directory of per-image files, keyed by stem. Accepts
/// the text format and the predict JSON payload.
inline PredictionSet load_prediction_dir(const std::filesystem::path& dir, std::size_t num_classes) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw MissingFileError(dir.string());
  PredictionSet preds;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && (e.path().extension() == ".txt" || e.path().extension() == ".json"))
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const auto stem = p.stem().string();
    if (preds.count(stem)) throw InvalidArgument("duplicate prediction files for image " + stem);
    try {
      if (p.extension() == ".txt") {
        preds[stem] = parse_prediction_file(detail::read_file(p), num_classes);
      } else {
        const auto r = predict_result_from_json(nlohmann::json::parse(detail::read_file(p)));
        auto& dets = preds[stem];
        for (auto d : r.detections) {
          const auto n = box_to_norm(d.box, r.image_width, r.image_height);
          d.box = norm_to_box(n, 1.0, 1.0);
          dets.push_back(d);
        }
      }
    } catch (const nlohmann::json::exception& err) {
      throw ParseError(p.string() + ": " + err.what());
    } catch (const ParseError& err) {
      throw ParseError(p.string() + ": " + err.what());
    }
  }
  return preds;
}

namespace detail {

inline nlohmann::ordered_json row_json(const ClassReport& r) {
  return {{"class_id", r.class_id},    {"name", r.name},         {"present", r.present},
          {"images", r.images},        {"boxes", r.boxes},       {"instances", r.instances},
          {"precision", r.precision},  {"recall", r.recall},     {"map50", r.ap50},
          {"map50_95", r.ap50_95}};
}

inline nlohmann::ordered_json curves_json(const ClassReport& r) {
  auto pr = nlohmann::ordered_json::array();
  for (const auto& p : r.pr.points) pr.push_back({{"confidence", p.confidence}, {"recall", p.recall}, {"precision", p.precision}});
  auto f1 = nlohmann::ordered_json::array();
  for (const auto& p : r.f1.points)
    f1.push_back({{"confidence", p.confidence}, {"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}});
  return {{"pr", pr}, {"f1", f1}, {"best_confidence", r.f1.best_confidence}, {"best_f1", r.f1.best_f1}};
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["convention"] = rep.convention;
  j["operating_confidence"] = rep.operating_confidence;
  j["overall"] = detail::row_json(rep.overall);
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : rep.classes) j["classes"].push_back(detail::row_json(c));
  nlohmann::ordered_json curves;
  curves["overall"] = detail::curves_json(rep.overall);
  for (const auto& c : rep.classes)
    if (c.present) curves[c.name] = detail::curves_json(c);
  j["curves"] = curves;
  return j;
}

/// Fixed-width table: one overall row, then one row per class.
inline std::string render_table(const EvalReport& rep) {
  std::string out = "# " + rep.convention + "\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %7s %7s %9s %9s %7s %7s %8s\n", "Class", "Images", "Boxes", "Instances",
                "Precision", "Recall", "mAP50", "mAP50-95");
  out += buf;
  auto row = [&](const ClassReport& r) {
    if (r.present)
      std::snprintf(buf, sizeof buf, "%-20s %7zu %7zu %9zu %9.3f %7.3f %7.3f %8.3f\n", r.name.c_str(), r.images,
                    r.boxes, r.instances, r.precision, r.recall, r.ap50, r.ap50_95);
    else
      std::snprintf(buf, sizeof buf, "%-20s %7zu %7zu %9zu %9s %7s %7s %8s\n", r.name.c_str(), r.images, r.boxes,
                    r.instances, "-", "-", "-", "-");
    out += buf;
  };
  row(rep.overall);
  for (const auto& c : rep.classes) row(c);
  return out;
}

namespace detail {

inline std::string csv_num(double v) { return format_double(v); }

inline std::vector<const ClassReport*> curve_series(const EvalReport& rep) {
  std::vector<const ClassReport*> s{&rep.overall};
  for (const auto& c : rep.classes)
    if (c.present) s.push_back(&c);
  return s;
}

}  // namespace detail

/// series,confidence,recall,precision. Each series opens with the (0, 1)
/// endpoint and closes with (1, 0); endpoint rows leave confidence empty.
inline std::string pr_curve_csv(const EvalReport& rep) {
  std::string out = "series,confidence,recall,precision\n";
  for (const auto* s : detail::curve_series(rep)) {
    out += s->name + ",,0,1\n";
    for (const auto& p : s->pr.points)
      out += s->name + "," + detail::csv_num(p.confidence) + "," + detail::csv_num(p.recall) + "," +
             detail::csv_num(p.precision) + "\n";
    out += s->name + ",,1,0\n";
  }
  return out;
}

/// series,confidence,precision,recall,f1. Each series opens with the
/// reject-everything endpoint (confidence 1, P 1, R 0, F1 0) and closes with
/// the accept-everything endpoint (confidence 0).
inline std::string f1_curve_csv(const EvalReport& rep) {
  std::string out = "series,confidence,precision,recall,f1\n";
  for (const auto* s : detail::curve_series(rep)) {
    auto line = [&](double c, double p, double r, double f) {
      out += s->name + "," + detail::csv_num(c) + "," + detail::csv_num(p) + "," + detail::csv_num(r) + "," +
             detail::csv_num(f) + "\n";
    };
    line(1.0, 1.0, 0.0, 0.0);
    for (const auto& p : s->f1.points) line(p.confidence, p.precision, p.recall, p.f1);
    if (s->f1.points.empty()) line(0.0, 1.0, 0.0, 0.0);
    else {
      const auto& last = s->f1.points.back();
      line(0.0, last.precision, last.recall, last.f1);
    }
  }
  return out;
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

struct SvgSeries {
  std::string name;
  std::string color;
  bool bold = false;
  std::vector<std::pair<double, double>> xy;
};

inline std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                            const std::vector<SvgSeries>& series) {
  constexpr double W = 640, H = 480, L = 60, R = 170, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  auto fx = [&](double x) { return L + x * pw; };
  auto fy = [&](double y) { return T + (1.0 - y) * ph; };
  char buf[256];
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">%s</text>\n",
                L + pw / 2, xml_escape(title).c_str());
  s += buf;
  for (int i = 0; i <= 10; ++i) {
    const double v = i / 10.0;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#dddddd\"/>\n"
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#dddddd\"/>\n",
                  fx(v), T, fx(v), T + ph, L, fy(v), L + pw, fy(v));
    s += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">%.1f</text>\n"
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">%.1f</text>\n",
                  fx(v), T + ph + 14, v, L - 6, fy(v) + 3, v);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n", L, T,
                pw, ph);
  s += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">%s</text>\n",
                L + pw / 2, H - 12, xml_escape(x_label).c_str());
  s += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"16\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 %.1f)\">%s</text>\n",
                T + ph / 2, T + ph / 2, xml_escape(y_label).c_str());
  s += buf;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& ser = series[k];
    s += "<polyline fill=\"none\" stroke=\"" + ser.color + "\" stroke-width=\"" + (ser.bold ? "3" : "1.5") + "\" points=\"";
    for (std::size_t i = 0; i < ser.xy.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", fx(ser.xy[i].first), fy(ser.xy[i].second));
      s += buf;
    }
    s += "\"/>\n";
    const double ly = T + 14 + 16.0 * static_cast<double>(k);
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"3\"/>\n"
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\">%s</text>\n",
                  L + pw + 10, ly, L + pw + 30, ly, ser.color.c_str(), L + pw + 36, ly + 4,
                  xml_escape(ser.name).c_str());
    s += buf;
  }
  s += "</svg>\n";
  return s;
}

inline std::vector<SvgSeries> svg_series(const EvalReport& rep, bool pr) {
  std::vector<SvgSeries> out;
  for (const auto* c : curve_series(rep)) {
    SvgSeries s;
    s.bold = c->class_id < 0;
    s.color = s.bold ? "#1f3a93" : to_hex(class_color(c->class_id));
    if (pr) {
      s.name = c->name + (s.bold ? " mAP50 " : " ") + [&] {
        char b[16];
        std::snprintf(b, sizeof b, "%.3f", c->ap50);
        return std::string(b);
      }();
      s.xy.emplace_back(0.0, 1.0);
      for (const auto& p : c->pr.points) s.xy.emplace_back(p.recall, p.precision);
      s.xy.emplace_back(1.0, 0.0);
    } else {
      s.name = c->name;
      s.xy.emplace_back(1.0, 0.0);
      for (const auto& p : c->f1.points) s.xy.emplace_back(p.confidence, p.f1);
      if (!c->f1.points.empty()) s.xy.emplace_back(0.0, c->f1.points.back().f1);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

inline std::string pr_curve_svg(const EvalReport& rep) {
  return detail::svg_plot("Precision-Recall Curve", "Recall", "Precision", detail::svg_series(rep, true));
}

inline std::string f1_curve_svg(const EvalReport& rep) {
  return detail::svg_plot("F1-Confidence Curve", "Confidence", "F1", detail::svg_series(rep, false));
}

}  // namespace fracdet
