#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "fracdet/decode.hpp"
#include "fracdet/palette.hpp"
#include "fracdet/predict_result.hpp"

namespace fracdet {

/// "name 0.87" box label.
inline std::string box_label(const std::vector<std::string>& class_names, const Detection& d) {
  char conf[16];
  std::snprintf(conf, sizeof conf, "%.2f", d.confidence);
  return class_name_or_id(class_names, d.class_id) + " " + conf;
}

/// Copy of `bgr` with class-colored boxes and labels. Output size equals input size.
inline cv::Mat draw_detections(const cv::Mat& bgr, const std::vector<Detection>& dets,
                               const std::vector<std::string>& class_names) {
  cv::Mat out = bgr.clone();
  const int thickness = std::max(1, static_cast<int>(std::lround((out.rows + out.cols) * 0.5 * 0.003)));
  const double font_scale = std::max(0.35, thickness / 3.0);
  for (const auto& d : dets) {
    const Rgb c = class_color(d.class_id);
    const cv::Scalar color(c.b, c.g, c.r);
    const cv::Point p1(static_cast<int>(d.box.x1), static_cast<int>(d.box.y1));
    const cv::Point p2(static_cast<int>(d.box.x2), static_cast<int>(d.box.y2));
    cv::rectangle(out, p1, p2, color, thickness, cv::LINE_AA);

    const auto label = box_label(class_names, d);
    int baseline = 0;
    const auto ts = cv::getTextSize(label, cv::FONT_HERSHEY_SIMPLEX, font_scale, std::max(1, thickness - 1), &baseline);
    const bool above = p1.y - ts.height - 3 >= 0;
    const cv::Point t1(p1.x, above ? p1.y - ts.height - 3 : p1.y);
    const cv::Point t2(p1.x + ts.width, above ? p1.y : p1.y + ts.height + 3);
    cv::rectangle(out, t1, t2, color, cv::FILLED, cv::LINE_AA);
    cv::putText(out, label, cv::Point(t1.x, t2.y - 2), cv::FONT_HERSHEY_SIMPLEX, font_scale, cv::Scalar(255, 255, 255),
                std::max(1, thickness - 1), cv::LINE_AA);
  }
  return out;
}

}  // namespace fracdet
