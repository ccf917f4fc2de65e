#pragma once

// Exported-model execution through OpenCV DNN: load + validate an ONNX
// detection model, letterbox an image, run it, decode the head, and time
// each stage.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/core/utils/logger.hpp>
#include <opencv2/dnn.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fracdet/anchors.hpp"
#include "fracdet/dataset.hpp"
#include "fracdet/decode.hpp"
#include "fracdet/error.hpp"
#include "fracdet/onnx_shape.hpp"
#include "fracdet/predict_result.hpp"

namespace fracdet {

/// How the model's single output is laid out.
enum class HeadFormat {
  raw_dfl,        // 4*(reg_max+1) bin logits + C class logits per anchor
  decoded_boxes,  // cx, cy, w, h (input px) + C class probabilities per anchor
};

struct LoadOptions {
  int reg_max = 16;
  /// Intra-op threads for OpenCV. 1 keeps execution deterministic.
  int threads = 1;
  std::string model_id;  // defaults to the file stem
};

/// One loaded network. Not safe for concurrent predictions; use one
/// session per in-flight request.
class ModelSession {
 public:
  ModelSession(const ModelSession&) = delete;
  ModelSession& operator=(const ModelSession&) = delete;
  ModelSession(ModelSession&&) = default;
  ModelSession& operator=(ModelSession&&) = default;

  const std::string& id() const noexcept { return id_; }
  const std::filesystem::path& path() const noexcept { return path_; }
  int input_size() const noexcept { return input_size_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  int reg_max() const noexcept { return reg_max_; }
  HeadFormat format() const noexcept { return format_; }
  std::size_t channels() const noexcept { return channels_; }
  std::span<const AnchorPoint> anchors() const noexcept { return anchors_; }
  HeadLayout layout() const noexcept { return {static_cast<int>(class_names_.size()), reg_max_}; }

  /// Runs the network on an NCHW float blob; returns the head output
  /// flattened channel-major.
  std::vector<float> run(const cv::Mat& blob) {
    try {
      net_.setInput(blob);
      cv::Mat out = net_.forward();
      return flatten_output(out);
    } catch (const cv::Exception& e) {
      throw ExecutionError("inference", e.what());
    }
  }

 private:
  ModelSession() = default;

  std::vector<float> flatten_output(const cv::Mat& out) const {
    const std::size_t anchors = anchors_.size();
    if (out.total() != anchors * channels_)
      throw ShapeMismatchError("model output has " + std::to_string(out.total()) + " elements, expected " +
                               std::to_string(anchors * channels_) + " (" + std::to_string(anchors) +
                               " anchors x " + std::to_string(channels_) + " channels)");
    cv::Mat cont = out.isContinuous() ? out : out.clone();
    const float* p = cont.ptr<float>();
    std::vector<float> v(p, p + cont.total());
    // [1, anchors, channels] exports are transposed to channel-major.
    if (cont.dims == 3 && static_cast<std::size_t>(cont.size[2]) == channels_ &&
        static_cast<std::size_t>(cont.size[1]) == anchors && channels_ != anchors) {
      std::vector<float> t(v.size());
      for (std::size_t a = 0; a < anchors; ++a)
        for (std::size_t c = 0; c < channels_; ++c) t[c * anchors + a] = v[a * channels_ + c];
      v.swap(t);
    }
    return v;
  }

  friend ModelSession load_model(const std::filesystem::path&, const std::vector<std::string>&, int,
                                 const LoadOptions&);

  std::string id_;
  std::filesystem::path path_;
  int input_size_ = 0;
  std::vector<std::string> class_names_;
  int reg_max_ = 16;
  HeadFormat format_ = HeadFormat::raw_dfl;
  std::size_t channels_ = 0;
  std::vector<AnchorPoint> anchors_;
  cv::dnn::Net net_;
};

inline void quiet_opencv_logging() { cv::utils::logging::setLogLevel(cv::utils::logging::LOG_LEVEL_SILENT); }

/// Convert an 8-bit image of any channel count to 3-channel BGR.
inline cv::Mat to_bgr(const cv::Mat& img) {
  if (img.empty()) throw ImageDecodeError("empty image");
  if (img.depth() != CV_8U) throw ImageDecodeError("only 8-bit images are supported");
  cv::Mat bgr;
  switch (img.channels()) {
    case 1: cv::cvtColor(img, bgr, cv::COLOR_GRAY2BGR); break;
    case 3: bgr = img; break;
    case 4: cv::cvtColor(img, bgr, cv::COLOR_BGRA2BGR); break;
    default: throw ImageDecodeError("unsupported channel count " + std::to_string(img.channels()));
  }
  return bgr;
}

/// Decode PNG or JPEG bytes; grayscale is replicated to three channels.
inline cv::Mat decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw ImageDecodeError("empty image payload");
  cv::Mat img;
  try {
    const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
    img = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw ImageDecodeError(e.what());
  }
  if (img.empty()) throw ImageDecodeError("payload is not a decodable PNG or JPEG image");
  return to_bgr(img);
}

inline cv::Mat read_image(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = detail::read_file(path);
  } catch (const MissingFileError&) {
    throw ImageDecodeError("cannot read " + path.string());
  }
  try {
    return decode_image({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
  } catch (const ImageDecodeError& e) {
    throw ImageDecodeError(path.string() + ": " + e.what());
  }
}

inline ModelSession load_model(const std::filesystem::path& path, const std::vector<std::string>& class_names,
                               int expected_input, const LoadOptions& opts = {}) {
  if (class_names.empty()) throw InvalidArgument("model needs at least one class name");
  if (expected_input <= 0 || expected_input % 32 != 0)
    throw InvalidArgument("model input size must be a positive multiple of 32, got " + std::to_string(expected_input));
  if (!std::filesystem::is_regular_file(path)) throw MissingFileError(path.string());

  const auto bytes = detail::read_file(path);
  const auto declared = read_onnx_input_shape(bytes);
  if (declared.dims.size() != 4) throw ShapeMismatchError("model input must be 4-D NCHW");
  for (std::size_t k : {std::size_t{2}, std::size_t{3}})
    if (declared.dims[k] && *declared.dims[k] != expected_input)
      throw ShapeMismatchError("model input is " + std::to_string(*declared.dims[k]) + " px, expected " +
                               std::to_string(expected_input));
  if (declared.dims[1] && *declared.dims[1] != 3) throw ShapeMismatchError("model input must have 3 channels");

  ModelSession s;
  s.id_ = opts.model_id.empty() ? path.stem().string() : opts.model_id;
  s.path_ = path;
  s.input_size_ = expected_input;
  s.class_names_ = class_names;
  s.reg_max_ = opts.reg_max;
  s.anchors_ = make_anchors(expected_input);
  cv::setNumThreads(std::max(1, opts.threads));
  try {
    s.net_ = cv::dnn::readNetFromONNX(bytes.data(), bytes.size());
  } catch (const cv::Exception& e) {
    throw MalformedModelError(path.string() + ": " + e.what());
  }
  if (s.net_.empty()) throw MalformedModelError(path.string() + ": empty network");
  s.net_.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
  s.net_.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);

  // Probe the output once to pin down the head format.
  const int probe_dims[] = {1, 3, expected_input, expected_input};
  cv::Mat probe(4, probe_dims, CV_32F, cv::Scalar(0));
  cv::Mat out;
  try {
    s.net_.setInput(probe);
    out = s.net_.forward();
  } catch (const cv::Exception& e) {
    throw ShapeMismatchError("model cannot run at " + std::to_string(expected_input) + " px: " + e.what());
  }
  const std::size_t nc = class_names.size();
  const std::size_t anchors = s.anchors_.size();
  const std::size_t raw_ch = 4 * static_cast<std::size_t>(opts.reg_max + 1) + nc;
  if (out.total() == anchors * raw_ch) {
    s.format_ = HeadFormat::raw_dfl;
    s.channels_ = raw_ch;
  } else if (out.total() == anchors * (4 + nc)) {
    s.format_ = HeadFormat::decoded_boxes;
    s.channels_ = 4 + nc;
  } else {
    throw ShapeMismatchError("model output has " + std::to_string(out.total()) + " elements; expected " +
                             std::to_string(anchors) + " anchors x " + std::to_string(raw_ch) + " channels (" +
                             std::to_string(nc) + " classes, reg_max " + std::to_string(opts.reg_max) + ")");
  }
  return s;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0, Clock::time_point t1) {
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace detail

/// Letterbox to the model size (gray padding) and pack as an RGB NCHW
/// float blob in [0, 1].
inline cv::Mat preprocess(const cv::Mat& bgr, const LetterboxTransform& t) {
  cv::Mat resized;
  if (t.scaled_w() != bgr.cols || t.scaled_h() != bgr.rows)
    cv::resize(bgr, resized, cv::Size(t.scaled_w(), t.scaled_h()), 0, 0, cv::INTER_LINEAR);
  else
    resized = bgr;
  const int left = static_cast<int>(t.pad_x), top = static_cast<int>(t.pad_y);
  const int right = t.target - t.scaled_w() - left, bottom = t.target - t.scaled_h() - top;
  cv::Mat canvas;
  const double pad = kLetterboxPadValue;
  cv::copyMakeBorder(resized, canvas, top, bottom, left, right, cv::BORDER_CONSTANT, cv::Scalar(pad, pad, pad));
  return cv::dnn::blobFromImage(canvas, 1.0 / 255.0, cv::Size(), cv::Scalar(), /*swapRB=*/true, /*crop=*/false,
                                CV_32F);
}

namespace detail {

inline PredictResult run_pipeline(ModelSession& s, const cv::Mat& bgr, const DecodeOptions& opt,
                                  Clock::time_point start) {
  PredictResult r;
  r.model_id = s.id();
  r.image_width = bgr.cols;
  r.image_height = bgr.rows;
  r.conf_thresh = opt.conf_thresh;
  r.iou_thresh = opt.iou_thresh;

  cv::Mat blob;
  LetterboxTransform lb;
  try {
    lb = letterbox(bgr.cols, bgr.rows, s.input_size());
    blob = preprocess(bgr, lb);
  } catch (const cv::Exception& e) {
    throw ExecutionError("preprocess", e.what());
  }
  const auto t1 = Clock::now();
  const auto raw = s.run(blob);
  const auto t2 = Clock::now();
  if (s.format() == HeadFormat::raw_dfl)
    r.detections = decode_all(std::span<const float>(raw), s.anchors(), s.layout(), lb, opt);
  else
    r.detections = decode_boxes(std::span<const float>(raw), s.anchors().size(),
                                static_cast<int>(s.class_names().size()), lb, opt);
  const auto t3 = Clock::now();

  r.timing.preprocess_ms = ms_since(start, t1);
  r.timing.inference_ms = ms_since(t1, t2);
  r.timing.postprocess_ms = ms_since(t2, t3);
  r.timing.total_ms = ms_since(start, Clock::now());
  return r;
}

}  // namespace detail

inline void validate_thresholds(const DecodeOptions& opt) {
  if (!(opt.conf_thresh > 0 && opt.conf_thresh < 1)) throw InvalidArgument("conf threshold must be in (0, 1)");
  if (!(opt.iou_thresh > 0 && opt.iou_thresh < 1)) throw InvalidArgument("iou threshold must be in (0, 1)");
}

/// Full pipeline on an already-decoded image.
inline PredictResult predict(ModelSession& s, const cv::Mat& image, const DecodeOptions& opt = {}) {
  validate_thresholds(opt);
  const auto start = detail::Clock::now();
  const cv::Mat bgr = to_bgr(image);
  return detail::run_pipeline(s, bgr, opt, start);
}

/// Full pipeline on encoded bytes; image decoding counts as preprocessing.
inline PredictResult predict(ModelSession& s, std::span<const std::uint8_t> encoded, const DecodeOptions& opt = {}) {
  validate_thresholds(opt);
  const auto start = detail::Clock::now();
  const cv::Mat bgr = decode_image(encoded);
  return detail::run_pipeline(s, bgr, opt, start);
}

struct StageStats {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline StageStats summarize(std::vector<double> v) {
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  StageStats s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
  // nearest-rank percentile
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95 = v[std::max<std::size_t>(rank, 1) - 1];
  s.min = v.front();
  s.max = v.back();
  return s;
}

struct BenchReport {
  std::vector<TimingBreakdown> samples;  // runs x images, warmup excluded
  std::size_t images = 0;
  std::size_t runs = 0;
  StageStats preprocess, inference, postprocess, total;
};

/// Time the predict pipeline: `warmup` untimed passes over all images, then
/// `runs` recorded passes.
inline BenchReport bench(ModelSession& s, const std::vector<cv::Mat>& images, std::size_t warmup, std::size_t runs,
                         const DecodeOptions& opt = {}) {
  if (images.empty()) throw InvalidArgument("bench needs at least one image");
  if (runs < 1) throw InvalidArgument("bench needs runs >= 1");
  for (std::size_t w = 0; w < warmup; ++w)
    for (const auto& img : images) predict(s, img, opt);
  BenchReport rep;
  rep.images = images.size();
  rep.runs = runs;
  for (std::size_t r = 0; r < runs; ++r)
    for (const auto& img : images) rep.samples.push_back(predict(s, img, opt).timing);
  std::vector<double> pre, inf, post, tot;
  for (const auto& t : rep.samples) {
    pre.push_back(t.preprocess_ms);
    inf.push_back(t.inference_ms);
    post.push_back(t.postprocess_ms);
    tot.push_back(t.total_ms);
  }
  rep.preprocess = summarize(pre);
  rep.inference = summarize(inf);
  rep.postprocess = summarize(post);
  rep.total = summarize(tot);
  return rep;
}

}  // namespace fracdet
