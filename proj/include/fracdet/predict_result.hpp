#pragma once

// Prediction payload shared by the CLI (--json) and the HTTP service.
// Schema: docs/predict_response.schema.json (schema_version 1).

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fracdet/decode.hpp"
#include "fracdet/error.hpp"

namespace fracdet {

inline constexpr int kPredictSchemaVersion = 1;

/// Wall-clock milliseconds per pipeline stage.
struct TimingBreakdown {
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
  double postprocess_ms = 0.0;
  double total_ms = 0.0;
};

struct PredictResult {
  std::string model_id;
  int image_width = 0;
  int image_height = 0;
  std::vector<Detection> detections;
  TimingBreakdown timing;
  double conf_thresh = 0.0;
  double iou_thresh = 0.0;
};

inline nlohmann::ordered_json timing_to_json(const TimingBreakdown& t) {
  return {{"preprocess_ms", t.preprocess_ms},
          {"inference_ms", t.inference_ms},
          {"postprocess_ms", t.postprocess_ms},
          {"total_ms", t.total_ms}};
}

inline std::string class_name_or_id(const std::vector<std::string>& names, int id) {
  return id >= 0 && static_cast<std::size_t>(id) < names.size() ? names[static_cast<std::size_t>(id)]
                                                                   : std::to_string(id);
}

/// Detections only, without timing: the part that must be identical across
/// repeated predictions of the same image.
inline nlohmann::ordered_json detections_to_json(const std::vector<Detection>& dets,
                                                 const std::vector<std::string>& class_names) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& d : dets) {
    arr.push_back({{"class_id", d.class_id},
                   {"class_name", class_name_or_id(class_names, d.class_id)},
                   {"confidence", d.confidence},
                   {"box", {{"x1", d.box.x1}, {"y1", d.box.y1}, {"x2", d.box.x2}, {"y2", d.box.y2}}}});
  }
  return arr;
}

inline nlohmann::ordered_json to_json(const PredictResult& r, const std::vector<std::string>& class_names) {
  return {{"schema_version", kPredictSchemaVersion},
          {"model", r.model_id},
          {"image", {{"width", r.image_width}, {"height", r.image_height}}},
          {"detections", detections_to_json(r.detections, class_names)},
          {"timing", timing_to_json(r.timing)},
          {"thresholds", {{"conf", r.conf_thresh}, {"iou", r.iou_thresh}}}};
}

inline PredictResult predict_result_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kPredictSchemaVersion)
      throw ParseError("unsupported prediction schema version");
    PredictResult r;
    r.model_id = j.at("model").get<std::string>();
    r.image_width = j.at("image").at("width").get<int>();
    r.image_height = j.at("image").at("height").get<int>();
    for (const auto& d : j.at("detections")) {
      const auto& b = d.at("box");
      r.detections.push_back({{b.at("x1").get<double>(), b.at("y1").get<double>(), b.at("x2").get<double>(),
                               b.at("y2").get<double>()},
                              d.at("class_id").get<int>(),
                              d.at("confidence").get<double>()});
    }
    const auto& t = j.at("timing");
    r.timing = {t.at("preprocess_ms").get<double>(), t.at("inference_ms").get<double>(),
                t.at("postprocess_ms").get<double>(), t.at("total_ms").get<double>()};
    r.conf_thresh = j.at("thresholds").at("conf").get<double>();
    r.iou_thresh = j.at("thresholds").at("iou").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("prediction JSON: ") + e.what());
  }
}

}  // namespace fracdet
