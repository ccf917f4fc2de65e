// fracdet: dataset splitting, offline prediction, evaluation, curve export,
// benchmarking and serving.
//
// Exit codes: 0 success, 1 domain error, 2 usage error. Every failure
// prints one "error: <kind>: <message>" line to stderr.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "fracdet/dataset.hpp"
#include "fracdet/draw.hpp"
#include "fracdet/evaluation.hpp"
#include "fracdet/inference.hpp"
#include "fracdet/report.hpp"
#include "fracdet/service.hpp"
#include "fracdet/version.hpp"

namespace fs = std::filesystem;
using namespace fracdet;

namespace {

constexpr int kOk = 0;
constexpr int kDomainError = 1;
constexpr int kUsageError = 2;

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << "error: " << kind << ": " << message << "\n";
  return code;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write " + p.string());
  out << text;
}

std::vector<std::string> resolve_classes(const std::string& file, const std::string& inline_names) {
  if (!inline_names.empty()) {
    auto names = detail::split_commas(inline_names);
    if (names.empty()) throw InvalidArgument("--class-names is empty");
    return names;
  }
  if (!file.empty()) return load_class_names(file);
  return default_class_names();
}

std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

// --- split ---------------------------------------------------------------

struct SplitArgs {
  std::string images, labels, ratios = "0.7,0.2,0.1", out, classes;
  std::uint64_t seed = 0;
  bool by_patient = false;
};

int run_split(const SplitArgs& a) {
  SplitRatios ratios;
  {
    const auto parts = detail::split_commas(a.ratios);
    std::vector<double> v;
    for (const auto& p : parts) {
      const auto d = detail::parse_double(p);
      if (!d) return fail(kUsageError, "invalid_argument", "--ratios: '" + p + "' is not a number");
      v.push_back(*d);
    }
    if (v.size() != 3) return fail(kUsageError, "invalid_argument", "--ratios needs three comma-separated values");
    ratios = {v[0], v[1], v[2]};
    try {
      validate_ratios(ratios);
    } catch (const InvalidArgument& e) {
      return fail(kUsageError, e.kind(), e.what());
    }
  }
  const auto classes = a.classes.empty() ? default_class_names() : load_class_names(a.classes);
  const auto entries = scan_dataset(a.images, a.labels, classes.size());
  if (entries.empty()) return fail(kDomainError, "no_inputs", "no images found in " + a.images);
  auto manifest = split(entries, ratios, a.seed, a.by_patient ? SplitMode::patient : SplitMode::image);
  manifest.classes = classes;
  write_text(a.out, format_manifest(manifest));

  const double n = static_cast<double>(manifest.total());
  std::printf("%-6s %8s %8s %8s\n", "split", "images", "percent", "boxes");
  for (const auto& [name, list] : {std::pair{"train", &manifest.train}, {"val", &manifest.val}, {"test", &manifest.test}}) {
    const auto hist = class_histogram(entries, classes.size(), list);
    std::printf("%-6s %8zu %7.2f%% %8zu\n", name, list->size(), 100.0 * static_cast<double>(list->size()) / n,
                hist.total);
  }
  std::printf("manifest written to %s\n", a.out.c_str());
  return kOk;
}

// --- predict -------------------------------------------------------------

struct ModelArgs {
  std::string model, classes, class_names;
  int imgsz = 640;
  int reg_max = 16;
  int threads = 1;
};

std::vector<fs::path> collect_images(const fs::path& input) {
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(input)) {
    files.push_back(input);
  } else {
    throw MissingFileError(input.string());
  }
  return files;
}

struct PredictArgs {
  ModelArgs model;
  std::string input, out;
  double conf = 0.25, iou = 0.45;
  bool json = false, draw = false, txt = false;
  std::size_t jobs = 0;
};

int run_predict(const PredictArgs& a) {
  DecodeOptions opt;
  opt.conf_thresh = a.conf;
  opt.iou_thresh = a.iou;
  validate_thresholds(opt);
  const auto classes = resolve_classes(a.model.classes, a.model.class_names);
  const auto files = collect_images(a.input);
  if (files.empty()) return fail(kDomainError, "no_inputs", "no inputs in " + a.input);
  fs::create_directories(a.out);

  const std::size_t jobs = std::min(files.size(), a.jobs ? a.jobs : default_jobs());
  LoadOptions lo;
  lo.reg_max = a.model.reg_max;
  lo.threads = a.model.threads;
  std::vector<ModelSession> sessions;
  for (std::size_t j = 0; j < jobs; ++j) sessions.push_back(load_model(a.model.model, classes, a.model.imgsz, lo));

  std::vector<std::string> json_lines(files.size());
  std::vector<std::string> errors(files.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&](ModelSession& session) {
    for (std::size_t i; (i = next++) < files.size();) {
      const auto& f = files[i];
      try {
        const cv::Mat img = read_image(f);
        const auto result = predict(session, img, opt);
        const auto j = to_json(result, classes);
        const auto stem = f.stem().string();
        write_text(fs::path(a.out) / (stem + ".json"), j.dump(2) + "\n");
        if (a.txt)
          write_text(fs::path(a.out) / (stem + ".txt"),
                     format_prediction_file(result.detections, result.image_width, result.image_height));
        if (a.draw) {
          const auto drawn = draw_detections(img, result.detections, classes);
          if (!cv::imwrite((fs::path(a.out) / (stem + ".png")).string(), drawn))
            throw Error("io_error", "cannot write annotated image");
        }
        json_lines[i] = j.dump();
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker, std::ref(sessions[j]));
  worker(sessions[0]);
  for (auto& t : pool) t.join();

  std::size_t failed = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!errors[i].empty()) {
      ++failed;
      std::cerr << "error: predict_failed: " << files[i].string() << ": " << errors[i] << "\n";
    } else if (a.json) {
      std::cout << json_lines[i] << "\n";
    }
  }
  if (!a.json) std::printf("%zu/%zu images predicted, results in %s\n", files.size() - failed, files.size(), a.out.c_str());
  return failed ? kDomainError : kOk;
}

// --- eval / curves ---------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, classes, out;
};

EvalReport build_report(const EvalArgs& a, const std::vector<std::string>& classes) {
  const auto gts = load_ground_truth_dir(a.gt, classes.size());
  const auto preds = load_prediction_dir(a.pred, classes.size());
  std::string offenders;
  for (const auto& [id, _] : preds)
    if (!gts.count(id)) offenders += (offenders.empty() ? "" : ", ") + id;
  if (!offenders.empty()) throw Error("stem_mismatch", "predictions without ground-truth files: " + offenders);
  return evaluate(preds, gts, classes);
}

int run_eval(const EvalArgs& a) {
  const auto classes = load_class_names(a.classes);
  const auto rep = build_report(a, classes);
  const fs::path out(a.out);
  write_text(out, report_to_json(rep).dump(2) + "\n");
  auto table_path = out;
  table_path.replace_extension(".txt");
  const auto table = render_table(rep);
  write_text(table_path, table);
  std::cout << table;
  std::printf("mAP50 %.3f  mAP50-95 %.3f\n", rep.overall.ap50, rep.overall.ap50_95);
  return kOk;
}

int run_curves(const EvalArgs& a) {
  const auto classes = a.classes.empty() ? default_class_names() : load_class_names(a.classes);
  const auto rep = build_report(a, classes);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_text(out / "pr_curve.csv", pr_curve_csv(rep));
  write_text(out / "f1_curve.csv", f1_curve_csv(rep));
  write_text(out / "pr_curve.svg", pr_curve_svg(rep));
  write_text(out / "f1_curve.svg", f1_curve_svg(rep));
  std::printf("curves written to %s (best mean F1 %.3f at confidence %.3f)\n", a.out.c_str(), rep.overall.f1.best_f1,
              rep.overall.f1.best_confidence);
  return kOk;
}

// --- bench ---------------------------------------------------------------

struct BenchArgs {
  ModelArgs model;
  std::string images;
  std::size_t warmup = 3, runs = 10;
  double conf = 0.25, iou = 0.45;
};

int run_bench(const BenchArgs& a) {
  const auto classes = resolve_classes(a.model.classes, a.model.class_names);
  if (!fs::is_directory(a.images)) throw MissingFileError(a.images);
  const auto files = collect_images(a.images);
  if (files.empty()) return fail(kDomainError, "no_inputs", "no images in " + a.images);
  std::vector<cv::Mat> images;
  for (const auto& f : files) images.push_back(read_image(f));
  LoadOptions lo;
  lo.reg_max = a.model.reg_max;
  lo.threads = a.model.threads;
  auto session = load_model(a.model.model, classes, a.model.imgsz, lo);
  DecodeOptions opt;
  opt.conf_thresh = a.conf;
  opt.iou_thresh = a.iou;
  const auto rep = bench(session, images, a.warmup, a.runs, opt);

  std::printf("model %s, input %d px, %zu images x %zu runs (warmup %zu), ms per image\n", session.id().c_str(),
              session.input_size(), rep.images, rep.runs, a.warmup);
  std::printf("%-8s %12s %12s %12s %12s\n", "stat", "preprocess", "inference", "postprocess", "total");
  auto row = [&](const char* name, double StageStats::*field) {
    std::printf("%-8s %12.3f %12.3f %12.3f %12.3f\n", name, rep.preprocess.*field, rep.inference.*field,
                rep.postprocess.*field, rep.total.*field);
  };
  row("mean", &StageStats::mean);
  row("median", &StageStats::median);
  row("p95", &StageStats::p95);
  return kOk;
}

// --- serve ---------------------------------------------------------------

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

int run_serve(const std::string& config_path) {
  auto cfg = load_service_config(config_path);
  Service service(std::move(cfg));
  const int port = service.bind();
  if (port < 0)
    return fail(kDomainError, "bind_failed",
                "cannot bind " + service.config().host + ":" + std::to_string(service.config().port));
  std::signal(SIGTERM, on_signal);
  std::signal(SIGINT, on_signal);
  std::thread watcher([&] {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    service.stop();
  });
  std::printf("serving on http://%s:%d\n", service.config().host.c_str(), port);
  std::fflush(stdout);
  const bool ok = service.listen_after_bind();
  g_stop = true;
  watcher.join();
  return ok || g_stop ? kOk : kDomainError;
}

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--model", m.model, "ONNX model path")->required();
  cmd->add_option("--classes", m.classes, "Class-name file (one per line)")->check(CLI::ExistingFile);
  cmd->add_option("--class-names", m.class_names, "Comma-separated class names (overrides --classes)");
  cmd->add_option("--imgsz", m.imgsz, "Model input size in pixels")->capture_default_str();
  cmd->add_option("--reg-max", m.reg_max, "DFL bins minus one")->capture_default_str();
  cmd->add_option("--threads", m.threads, "Intra-op threads (1 = deterministic)")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  quiet_opencv_logging();
  CLI::App app{"Wrist-fracture detection workbench"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "Seeded train/val/test split of an image + label directory");
  split_cmd->add_option("--images", split_args.images, "Image directory")->required();
  split_cmd->add_option("--labels", split_args.labels, "YOLO label directory")->required();
  split_cmd->add_option("--ratios", split_args.ratios, "train,val,test fractions")->capture_default_str();
  split_cmd->add_option("--seed", split_args.seed, "Shuffle seed")->capture_default_str();
  split_cmd->add_option("--out", split_args.out, "Manifest output path")->required();
  split_cmd->add_option("--classes", split_args.classes, "Class-name file")->check(CLI::ExistingFile);
  split_cmd->add_flag("--by-patient", split_args.by_patient, "Keep each patient's images in one fold");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Run a model on an image or a directory of images");
  add_model_options(predict_cmd, predict_args.model);
  predict_cmd->add_option("--input", predict_args.input, "Image file or directory")->required();
  predict_cmd->add_option("--out", predict_args.out, "Output directory")->required();
  predict_cmd->add_option("--conf", predict_args.conf, "Confidence threshold")->capture_default_str();
  predict_cmd->add_option("--iou", predict_args.iou, "NMS IoU threshold")->capture_default_str();
  predict_cmd->add_flag("--json", predict_args.json, "Also print each result as one JSON line on stdout");
  predict_cmd->add_flag("--draw", predict_args.draw, "Write annotated PNGs");
  predict_cmd->add_flag("--txt", predict_args.txt, "Write normalized 'class conf cx cy w h' files");
  predict_cmd->add_option("--jobs", predict_args.jobs, "Parallel images (default: core count)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Per-class precision/recall/mAP report");
  eval_cmd->add_option("--pred", eval_args.pred, "Prediction directory")->required();
  eval_cmd->add_option("--gt", eval_args.gt, "Ground-truth label directory")->required();
  eval_cmd->add_option("--classes", eval_args.classes, "Class-name file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval_args.out, "Report JSON path (table written next to it as .txt)")->required();

  EvalArgs curves_args;
  auto* curves_cmd = app.add_subcommand("curves", "Export P-R and F1-confidence curves as CSV and SVG");
  curves_cmd->add_option("--pred", curves_args.pred, "Prediction directory")->required();
  curves_cmd->add_option("--gt", curves_args.gt, "Ground-truth label directory")->required();
  curves_cmd->add_option("--classes", curves_args.classes, "Class-name file")->check(CLI::ExistingFile);
  curves_cmd->add_option("--out", curves_args.out, "Output directory")->required();

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "Per-stage latency benchmark");
  add_model_options(bench_cmd, bench_args.model);
  bench_cmd->add_option("--images", bench_args.images, "Image directory")->required();
  bench_cmd->add_option("--warmup", bench_args.warmup, "Untimed passes")->capture_default_str();
  bench_cmd->add_option("--runs", bench_args.runs, "Timed passes")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--conf", bench_args.conf, "Confidence threshold")->capture_default_str();
  bench_cmd->add_option("--iou", bench_args.iou, "NMS IoU threshold")->capture_default_str();

  std::string config_path;
  auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP service");
  serve_cmd->add_option("--config", config_path, "Service config file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsageError, "usage", e.what());
  }

  try {
    if (*split_cmd) return run_split(split_args);
    if (*predict_cmd) return run_predict(predict_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*curves_cmd) return run_curves(curves_args);
    if (*bench_cmd) return run_bench(bench_args);
    if (*serve_cmd) return run_serve(config_path);
  } catch (const InvalidArgument& e) {
    return fail(kUsageError, e.kind(), e.what());
  } catch (const Error& e) {
    return fail(kDomainError, e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail(kDomainError, "error", e.what());
  }
  return kUsageError;
}
