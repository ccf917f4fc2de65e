#pragma once

// HTTP facade over the inference module.
//
//   GET  /health                               status + version
//   GET  /api/models                           registered models
//   POST /api/predict?model=ID&conf=F&iou=F    image bytes (raw or multipart "image")
//
// Images are never written to disk. Each model owns a fixed pool of
// sessions; a request holds one session for the duration of its prediction.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fracdet/dataset.hpp"
#include "fracdet/error.hpp"
#include "fracdet/inference.hpp"
#include "fracdet/palette.hpp"
#include "fracdet/predict_result.hpp"
#include "fracdet/version.hpp"

namespace fracdet {

struct ModelConfig {
  std::string id;
  std::filesystem::path path;
  int input_size = 640;
  std::vector<std::string> class_names;
  int reg_max = 16;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<ModelConfig> models;
  double conf = 0.25;
  double iou = 0.45;
  std::size_t max_upload_bytes = 20u << 20;
  std::size_t pool_size = 0;  // 0: hardware concurrency capped at 4
  std::chrono::milliseconds checkout_timeout{30000};
  std::string cors_origin;            // empty disables CORS headers
  std::filesystem::path audit_log;    // empty disables the request-metadata log
  std::filesystem::path static_dir;   // optional UI assets mounted at /
  int threads = 1;                    // intra-op threads per session

  std::size_t effective_pool_size() const {
    if (pool_size) return pool_size;
    return std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 4);
  }

  void validate() const {
    if (models.empty()) throw InvalidArgument("service config registers no models");
    if (!(conf > 0 && conf < 1) || !(iou > 0 && iou < 1)) throw InvalidArgument("default thresholds must be in (0, 1)");
    if (port < 0 || port > 65535) throw InvalidArgument("port out of range");
    std::set<std::string> ids;
    for (const auto& m : models) {
      if (m.id.empty()) throw InvalidArgument("model id must not be empty");
      if (!ids.insert(m.id).second) throw InvalidArgument("duplicate model id " + m.id);
      if (m.class_names.empty()) throw InvalidArgument("model " + m.id + " has no class names");
    }
  }
};

namespace detail {

inline std::pair<std::string, int> parse_bind(std::string_view v) {
  const auto colon = v.rfind(':');
  if (colon == std::string_view::npos) throw ParseError("bind: expected host:port");
  const auto port = parse_int(v.substr(colon + 1));
  if (!port || *port < 0 || *port > 65535) throw ParseError("bind: invalid port");
  return {std::string(v.substr(0, colon)), static_cast<int>(*port)};
}

}  // namespace detail

/// Key-value config. Global keys first, then one "[model ID]" section per
/// model. Relative paths resolve against `base_dir`; model files resolve
/// against `model_dir` when that key (or MODEL_DIR) is set.
inline ServiceConfig parse_service_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
  ServiceConfig cfg;
  std::filesystem::path model_dir;
  ModelConfig* model = nullptr;
  std::vector<std::pair<std::size_t, std::filesystem::path>> class_files;  // model index, file

  detail::for_each_line(text, [&](std::size_t line_no, std::string_view raw) {
    const auto line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) return;
    if (line.front() == '[') {
      if (line.back() != ']' || line.substr(0, 7) != "[model ") throw ParseError("expected [model ID]", line_no);
      cfg.models.push_back({});
      model = &cfg.models.back();
      model->id = std::string(detail::trim(line.substr(7, line.size() - 8)));
      return;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", line_no);
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    auto number = [&](std::string_view what) {
      const auto d = detail::parse_double(value);
      if (!d) throw ParseError(std::string(what) + ": not a number", line_no);
      return *d;
    };
    auto integer = [&](std::string_view what) {
      const auto i = detail::parse_int(value);
      if (!i || *i < 0) throw ParseError(std::string(what) + ": not a non-negative integer", line_no);
      return *i;
    };
    if (model) {
      if (key == "path") model->path = std::string(value);
      else if (key == "input_size") model->input_size = static_cast<int>(integer(key));
      else if (key == "reg_max") model->reg_max = static_cast<int>(integer(key));
      else if (key == "class_names") model->class_names = detail::split_commas(value);
      else if (key == "classes") class_files.emplace_back(cfg.models.size() - 1, std::string(value));
      else throw ParseError("unknown model key " + std::string(key), line_no);
      return;
    }
    if (key == "bind") std::tie(cfg.host, cfg.port) = detail::parse_bind(value);
    else if (key == "conf") cfg.conf = number(key);
    else if (key == "iou") cfg.iou = number(key);
    else if (key == "max_upload_bytes") cfg.max_upload_bytes = static_cast<std::size_t>(integer(key));
    else if (key == "pool_size") cfg.pool_size = static_cast<std::size_t>(integer(key));
    else if (key == "checkout_timeout_ms") cfg.checkout_timeout = std::chrono::milliseconds(integer(key));
    else if (key == "threads") cfg.threads = static_cast<int>(integer(key));
    else if (key == "cors_origin") cfg.cors_origin = std::string(value);
    else if (key == "audit_log") cfg.audit_log = std::string(value);
    else if (key == "static_dir") cfg.static_dir = std::string(value);
    else if (key == "model_dir") model_dir = std::string(value);
    else throw ParseError("unknown key " + std::string(key), line_no);
  });

  auto resolve = [&](const std::filesystem::path& p, const std::filesystem::path& base) {
    return p.empty() || p.is_absolute() || base.empty() ? p : base / p;
  };
  for (const auto& [m, file] : class_files) cfg.models[m].class_names = load_class_names(resolve(file, base_dir));
  if (const char* env = std::getenv("MODEL_DIR"); env && *env) model_dir = env;
  const auto models_base = model_dir.empty() ? base_dir : resolve(model_dir, base_dir);
  for (auto& m : cfg.models) m.path = resolve(m.path, models_base);
  if (!cfg.audit_log.empty()) cfg.audit_log = resolve(cfg.audit_log, base_dir);
  if (!cfg.static_dir.empty()) cfg.static_dir = resolve(cfg.static_dir, base_dir);

  if (const char* env = std::getenv("BIND_ADDR"); env && *env) std::tie(cfg.host, cfg.port) = detail::parse_bind(env);
  if (const char* env = std::getenv("MAX_UPLOAD_BYTES"); env && *env) {
    const auto v = detail::parse_int(env);
    if (!v || *v <= 0) throw ParseError("MAX_UPLOAD_BYTES: not a positive integer");
    cfg.max_upload_bytes = static_cast<std::size_t>(*v);
  }
  cfg.validate();
  return cfg;
}

inline ServiceConfig load_service_config(const std::filesystem::path& path) {
  return parse_service_config(detail::read_file(path), path.parent_path());
}

/// Fixed set of sessions for one model; checkout blocks until one is free
/// or the timeout passes.
class SessionPool {
 public:
  class Lease {
   public:
    Lease(SessionPool* pool, ModelSession* s) : pool_(pool), session_(s) {}
    Lease(Lease&& o) noexcept : pool_(std::exchange(o.pool_, nullptr)), session_(o.session_) {}
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
    Lease& operator=(Lease&&) = delete;
    ~Lease() {
      if (pool_) pool_->release(session_);
    }
    ModelSession& operator*() const { return *session_; }
    ModelSession* operator->() const { return session_; }

   private:
    SessionPool* pool_;
    ModelSession* session_;
  };

  SessionPool(const ModelConfig& m, std::size_t size, int threads) {
    LoadOptions opts;
    opts.reg_max = m.reg_max;
    opts.threads = threads;
    opts.model_id = m.id;
    for (std::size_t i = 0; i < std::max<std::size_t>(size, 1); ++i) {
      sessions_.push_back(std::make_unique<ModelSession>(load_model(m.path, m.class_names, m.input_size, opts)));
      free_.push_back(sessions_.back().get());
    }
  }

  std::optional<Lease> checkout(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !free_.empty(); })) return std::nullopt;
    ModelSession* s = free_.back();
    free_.pop_back();
    return Lease(this, s);
  }

  std::size_t size() const noexcept { return sessions_.size(); }
  const ModelSession& front() const { return *sessions_.front(); }

 private:
  void release(ModelSession* s) {
    {
      std::lock_guard lock(mu_);
      free_.push_back(s);
    }
    cv_.notify_one();
  }

  std::vector<std::unique_ptr<ModelSession>> sessions_;
  std::vector<ModelSession*> free_;
  std::mutex mu_;
  std::condition_variable cv_;
};

struct HttpReply {
  int status = 200;
  std::string body;
};

/// Owns the model pools and the HTTP server. Construction loads every model
/// and throws on the first failure, so a bad config never serves traffic.
class Service {
 public:
  explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (const auto& m : cfg_.models)
      pools_.emplace(m.id, std::make_unique<SessionPool>(m, cfg_.effective_pool_size(), cfg_.threads));
    install_routes();
  }

  const ServiceConfig& config() const noexcept { return cfg_; }
  httplib::Server& server() noexcept { return server_; }

  /// Bind the listening socket; port 0 picks a free port. Returns the port
  /// or -1 on failure.
  int bind() {
    if (cfg_.port == 0) return server_.bind_to_any_port(cfg_.host);
    return server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
  }

  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

  HttpReply health() const {
    return {200, nlohmann::ordered_json{{"status", "ok"}, {"version", kVersion}}.dump()};
  }

  HttpReply models() const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& m : cfg_.models) {
      auto colors = nlohmann::ordered_json::array();
      for (std::size_t c = 0; c < m.class_names.size(); ++c) colors.push_back(to_hex(class_color(static_cast<int>(c))));
      arr.push_back({{"id", m.id}, {"input_size", m.input_size}, {"class_names", m.class_names}, {"colors", colors}});
    }
    return {200, nlohmann::ordered_json{{"models", arr}}.dump()};
  }

  /// POST /api/predict body handling; parameters already pulled from the query.
  HttpReply predict(const std::string& model_id, const std::optional<std::string>& conf_s,
                    const std::optional<std::string>& iou_s, std::string_view image) {
    const std::string id = model_id.empty() ? cfg_.models.front().id : model_id;
    const auto pool = pools_.find(id);
    if (pool == pools_.end()) return error(404, "unknown_model", "no model registered as '" + id + "'");
    if (image.size() > cfg_.max_upload_bytes)
      return error(413, "payload_too_large",
                   "image is " + std::to_string(image.size()) + " bytes, limit " + std::to_string(cfg_.max_upload_bytes));

    DecodeOptions opt;
    opt.conf_thresh = cfg_.conf;
    opt.iou_thresh = cfg_.iou;
    for (auto [text, target, name] : {std::tuple{&conf_s, &opt.conf_thresh, "conf"}, {&iou_s, &opt.iou_thresh, "iou"}}) {
      if (!*text) continue;
      const auto v = detail::parse_double(**text);
      if (!v || !(*v > 0 && *v < 1)) return error(400, "invalid_threshold", std::string(name) + " must be in (0, 1)");
      *target = *v;
    }
    if (image.empty()) return error(422, "undecodable_image", "request carries no image bytes");

    auto lease = pool->second->checkout(cfg_.checkout_timeout);
    if (!lease) return error(503, "busy", "no free session for model '" + id + "'");
    try {
      const auto result = fracdet::predict(
          **lease, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(image.data()), image.size()), opt);
      audit(id, result, 200);
      return {200, to_json(result, (*lease)->class_names()).dump()};
    } catch (const ImageDecodeError& e) {
      return error(422, e.kind(), e.what());
    } catch (const ExecutionError& e) {
      return error(500, e.kind(), e.what(), e.stage());
    } catch (const Error& e) {
      return error(500, e.kind(), e.what(), "postprocess");
    } catch (const std::exception& e) {
      return error(500, "execution_failure", e.what(), "unknown");
    }
  }

 private:
  static HttpReply error(int status, const std::string& kind, const std::string& message,
                         const std::string& stage = {}) {
    nlohmann::ordered_json e{{"status", status}, {"kind", kind}, {"message", message}};
    if (!stage.empty()) e["stage"] = stage;
    return {status, nlohmann::ordered_json{{"error", e}}.dump()};
  }

  void audit(const std::string& model_id, const PredictResult& r, int status) {
    if (cfg_.audit_log.empty()) return;
    const nlohmann::ordered_json line{{"time", static_cast<long long>(std::time(nullptr))},
                                      {"model", model_id},
                                      {"status", status},
                                      {"image", {{"width", r.image_width}, {"height", r.image_height}}},
                                      {"detections", r.detections.size()},
                                      {"total_ms", r.timing.total_ms}};
    std::lock_guard lock(audit_mu_);
    std::ofstream(cfg_.audit_log, std::ios::app) << line.dump() << '\n';
  }

  void send(httplib::Response& res, const HttpReply& reply) const {
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  }

  void install_routes() {
    server_.set_payload_max_length(cfg_.max_upload_bytes + (1u << 20));
    if (!cfg_.cors_origin.empty()) {
      server_.set_default_headers({{"Access-Control-Allow-Origin", cfg_.cors_origin},
                                   {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                   {"Access-Control-Allow-Headers", "Content-Type"}});
      server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    }
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server_.Get("/api/models", [this](const httplib::Request&, httplib::Response& res) { send(res, models()); });
    server_.Post("/api/predict", [this](const httplib::Request& req, httplib::Response& res) {
      auto param = [&](const char* k) -> std::optional<std::string> {
        if (!req.has_param(k)) return std::nullopt;
        return req.get_param_value(k);
      };
      std::string_view body = req.body;
      std::string file_content;
      if (req.is_multipart_form_data()) {
        if (req.has_file("image")) file_content = req.get_file_value("image").content;
        else if (!req.files.empty()) file_content = req.files.begin()->second.content;
        body = file_content;
      }
      send(res, predict(param("model").value_or(""), param("conf"), param("iou"), body));
    });
    if (!cfg_.static_dir.empty()) server_.set_mount_point("/", cfg_.static_dir.string());
  }

  ServiceConfig cfg_;
  std::map<std::string, std::unique_ptr<SessionPool>> pools_;
  httplib::Server server_;
  std::mutex audit_mu_;
};

}  // namespace fracdet
