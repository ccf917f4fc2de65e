#include <gtest/gtest.h>

#include <opencv2/imgcodecs.hpp>

#include "fracdet/draw.hpp"
#include "fracdet/inference.hpp"
#include "support/encode.hpp"
#include "support/fixtures.hpp"
#include "tiny_model.hpp"

using namespace fracdet;

namespace {

const std::vector<std::string> kTwoClasses{"fracture", "text"};

cv::Mat noise_image(int w, int h, std::uint64_t seed) {
  cv::Mat img(h, w, CV_8UC3);
  cv::RNG rng(seed);
  rng.fill(img, cv::RNG::UNIFORM, 0, 256);
  return img;
}

class Inference : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { quiet_opencv_logging(); }
};

}  // namespace

TEST_F(Inference, LoadsTinyModel) {
  const auto s = load_model(FRACDET_TINY_MODEL, kTwoClasses, 64);
  EXPECT_EQ(s.channels(), 4u * 17u + 2u);
  EXPECT_EQ(s.anchors().size(), 84u);
  EXPECT_EQ(s.format(), HeadFormat::raw_dfl);
  EXPECT_EQ(s.id(), "tiny64");
}

TEST_F(Inference, MissingFile) {
  EXPECT_THROW(load_model("/nonexistent/model.onnx", kTwoClasses, 64), MissingFileError);
}

TEST_F(Inference, MalformedModel) {
  fixture::TempDir dir;
  fixture::write_file(dir / "junk.onnx", "this is not a protobuf graph");
  EXPECT_THROW(load_model(dir / "junk.onnx", kTwoClasses, 64), MalformedModelError);
}

TEST_F(Inference, InputSizeMismatch) {
  EXPECT_THROW(load_model(FRACDET_TINY_MODEL_640, kTwoClasses, 1024), ShapeMismatchError);
}

TEST_F(Inference, ClassCountMismatch) {
  EXPECT_THROW(load_model(FRACDET_TINY_MODEL, {"a", "b", "c"}, 64), ShapeMismatchError);
}

TEST_F(Inference, DeterministicAcrossRuns) {
  auto s = load_model(FRACDET_TINY_MODEL, kTwoClasses, 64);
  const auto img = noise_image(100, 80, 3);
  DecodeOptions opt;
  opt.conf_thresh = 0.05;
  const auto first = predict(s, img, opt);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(predict(s, img, opt).detections, first.detections);
  const cv::Mat blank(80, 100, CV_8UC3, cv::Scalar::all(0));
  const auto b = predict(s, blank, opt);
  EXPECT_EQ(predict(s, blank, opt).detections, b.detections);
}

TEST_F(Inference, TimingFields) {
  auto s = load_model(FRACDET_TINY_MODEL, kTwoClasses, 64);
  const auto r = predict(s, noise_image(64, 64, 4));
  EXPECT_GT(r.timing.preprocess_ms, 0.0);
  EXPECT_GT(r.timing.inference_ms, 0.0);
  EXPECT_GT(r.timing.postprocess_ms, 0.0);
  EXPECT_GE(r.timing.total_ms, r.timing.preprocess_ms + r.timing.inference_ms + r.timing.postprocess_ms);
}

TEST_F(Inference, FixedBoxModel) {
  fixture::TempDir dir;
  const HeadLayout layout{2, 16};
  const auto anchors = make_anchors(64);
  const auto t = letterbox(128, 96, 64);  // scale 0.5, pad_y 8
  const Box target{30, 22, 90, 70};
  std::size_t anchor = 0;  // a stride-8 anchor near the box center
  for (std::size_t a = 0; a < 64; ++a)
    if (anchors[a].cx == 3.5 && anchors[a].cy == 3.5) anchor = a;
  fracdet::tools::TinyModelOptions o;
  o.input_size = 64;
  o.num_classes = 2;
  o.constant_head = encode::single_box(anchors, layout, anchor, letterbox_box(target, t), 1, 5.0f);
  fracdet::tools::write_tiny_model((dir / "fixed.onnx").string(), o);

  auto s = load_model(dir / "fixed.onnx", kTwoClasses, 64);
  const auto r = predict(s, noise_image(128, 96, 5));
  ASSERT_EQ(r.detections.size(), 1u);
  EXPECT_EQ(r.detections[0].class_id, 1);
  EXPECT_NEAR(r.detections[0].box.x1, target.x1, 0.5);
  EXPECT_NEAR(r.detections[0].box.y1, target.y1, 0.5);
  EXPECT_NEAR(r.detections[0].box.x2, target.x2, 0.5);
  EXPECT_NEAR(r.detections[0].box.y2, target.y2, 0.5);
}

TEST_F(Inference, DecodesEncodedPngAndGrayscale) {
  auto s = load_model(FRACDET_TINY_MODEL, kTwoClasses, 64);
  cv::Mat gray(50, 70, CV_8UC1, cv::Scalar(90));
  std::vector<std::uint8_t> png;
  cv::imencode(".png", gray, png);
  const auto r = predict(s, std::span<const std::uint8_t>(png));
  EXPECT_EQ(r.image_width, 70);
  EXPECT_EQ(r.image_height, 50);
  cv::Mat as_bgr;
  cv::cvtColor(gray, as_bgr, cv::COLOR_GRAY2BGR);
  EXPECT_EQ(predict(s, as_bgr).detections, r.detections);
}

TEST_F(Inference, UndecodableImage) {
  auto s = load_model(FRACDET_TINY_MODEL, kTwoClasses, 64);
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  EXPECT_THROW(predict(s, std::span<const std::uint8_t>(junk)), ImageDecodeError);
  EXPECT_THROW(predict(s, std::span<const std::uint8_t>()), ImageDecodeError);
}

TEST_F(Inference, RejectsBadThresholds) {
  auto s = load_model(FRACDET_TINY_MODEL, kTwoClasses, 64);
  DecodeOptions opt;
  opt.conf_thresh = 1.5;
  EXPECT_THROW(predict(s, noise_image(8, 8, 1), opt), InvalidArgument);
}

TEST_F(Inference, BenchCounts) {
  auto s = load_model(FRACDET_TINY_MODEL, kTwoClasses, 64);
  const std::vector<cv::Mat> one{noise_image(64, 64, 6)};
  const auto r = bench(s, one, 0, 3);
  ASSERT_EQ(r.samples.size(), 3u);
  EXPECT_GE(r.total.mean, r.total.min);
  EXPECT_LE(r.total.mean, r.total.max);
  const std::vector<cv::Mat> two{noise_image(64, 64, 7), noise_image(30, 90, 8)};
  EXPECT_EQ(bench(s, two, 2, 5).samples.size(), 10u);
  const auto r1 = bench(s, two, 0, 1);
  EXPECT_EQ(r1.samples.size(), 2u);
  EXPECT_GE(r1.total.p95, r1.total.median);
  EXPECT_GE(r1.total.median, 0.0);
  EXPECT_THROW(bench(s, {}, 0, 1), InvalidArgument);
  EXPECT_THROW(bench(s, one, 0, 0), InvalidArgument);
}

TEST_F(Inference, LargerInputTakesLonger) {
  // Measured locally; compares medians to stay robust to scheduler noise.
  auto small = load_model(FRACDET_TINY_MODEL_640, kTwoClasses, 640);
  auto large = load_model(FRACDET_TINY_MODEL_1024, kTwoClasses, 1024);
  const std::vector<cv::Mat> img{noise_image(800, 600, 9)};
  const auto a = bench(small, img, 1, 7);
  const auto b = bench(large, img, 1, 7);
  EXPECT_GT(b.inference.median, a.inference.median);
}

TEST(Summarize, NearestRankPercentile) {
  std::vector<double> v;
  for (int i = 1; i <= 20; ++i) v.push_back(i);
  const auto s = summarize(v);
  EXPECT_EQ(s.median, 10.5);
  EXPECT_EQ(s.p95, 19.0);
  EXPECT_EQ(s.mean, 10.5);
}

TEST(Draw, KeepsDimensionsAndLabels) {
  const cv::Mat img(60, 90, CV_8UC3, cv::Scalar::all(0));
  const std::vector<Detection> d{{{10, 10, 40, 40}, 3, 0.874}};
  const auto out = draw_detections(img, d, default_class_names());
  EXPECT_EQ(out.cols, 90);
  EXPECT_EQ(out.rows, 60);
  EXPECT_EQ(box_label(default_class_names(), d[0]), "fracture 0.87");
  EXPECT_GT(cv::norm(out), 0.0);
}

TEST(PredictJson, RoundTrip) {
  PredictResult r;
  r.model_id = "m";
  r.image_width = 100;
  r.image_height = 50;
  r.detections = {{{1, 2, 30, 40}, 1, 0.5}};
  r.conf_thresh = 0.25;
  r.iou_thresh = 0.45;
  const auto j = to_json(r, kTwoClasses);
  EXPECT_EQ(j["detections"][0]["class_name"], "text");
  const auto back = predict_result_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.detections, r.detections);
  EXPECT_EQ(back.image_width, 100);
}
