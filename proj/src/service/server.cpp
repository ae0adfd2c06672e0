#include "pianofill/service/server.hpp"

#include <httplib.h>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <random>

#include "pianofill/midi_file.hpp"
#include "pianofill/model/checkpoint.hpp"
#include "pianofill/service/api.hpp"

namespace pianofill::service {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

struct Cancelled {};

std::string sse(const char* event, const json& data) {
  return std::string("event: ") + event + "\ndata: " + data.dump() + "\n\n";
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// One generation: a worker thread produces SSE frames, the HTTP thread drains them.
class Session {
 public:
  Session(std::shared_ptr<const LoadedModel> model, inference::InpaintRequest req, std::atomic<int>& active)
      : model_(std::move(model)), req_(std::move(req)), active_(active) {}

  ~Session() {
    cancel();
    if (worker_.joinable()) worker_.join();
    --active_;
  }

  void start() {
    worker_ = std::thread([this] { run(); });
  }

  void cancel() { cancelled_ = true; }

  /// Blocks until a frame is available or the run ended. Returns false when drained.
  bool next(std::string& frame, bool& failed) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !frames_.empty() || finished_; });
    failed = failed_;
    if (frames_.empty()) return false;
    frame = std::move(frames_.front());
    frames_.pop_front();
    return true;
  }

  /// Waits for the first frame; returns the error message if the run failed before any note.
  std::optional<std::string> early_failure() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !frames_.empty() || finished_; });
    if (failed_ && notes_ == 0) return error_;
    return std::nullopt;
  }

 private:
  void push(std::string frame, bool note) {
    std::lock_guard lock(mu_);
    frames_.push_back(std::move(frame));
    if (note) ++notes_;
    cv_.notify_all();
  }

  void finish(bool failed, std::string error = {}) {
    std::lock_guard lock(mu_);
    finished_ = true;
    failed_ = failed;
    error_ = std::move(error);
    if (failed) frames_.push_back(sse("error", error_body("generation_failed", error_)));
    cv_.notify_all();
  }

  void run() {
    const auto t0 = Clock::now();
    double first_note = -1.0;
    try {
      const auto result = model_->engine->inpaint(req_, [&](const NoteEvent& n) {
        if (cancelled_) throw Cancelled{};
        if (first_note < 0) first_note = std::chrono::duration<double>(Clock::now() - t0).count();
        push(sse("note", note_to_json(n)), true);
      });
      json done = {{"performance", performance_to_json(result.performance)},
                   {"note_count", result.emitted.size()},
                   {"time_to_first_note_s", first_note < 0 ? json(nullptr) : json(first_note)},
                   {"total_s", std::chrono::duration<double>(Clock::now() - t0).count()},
                   {"rescaled", result.rescaled},
                   {"mode", inference::mode_name(req_.mode)},
                   {"seed", req_.seed}};
      push(sse("done", done), false);
      finish(false);
    } catch (const Cancelled&) {
      finish(true, "cancelled");
    } catch (const std::exception& e) {
      finish(true, e.what());
    }
  }

  std::shared_ptr<const LoadedModel> model_;
  inference::InpaintRequest req_;
  std::atomic<int>& active_;
  std::thread worker_;
  std::atomic<bool> cancelled_{false};
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> frames_;
  std::size_t notes_ = 0;
  bool finished_ = false;
  bool failed_ = false;
  std::string error_;
};

json config_summary(const model::ModelConfig& c) {
  return {{"model_dim", c.model_dim}, {"n_heads", c.n_heads}, {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers}, {"ff_dim", c.ff_dim}};
}

}  // namespace

std::shared_ptr<const LoadedModel> load_model(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  model::Checkpoint ck = model::deserialize_checkpoint(bytes);
  const std::string name = path.substr(path.find_last_of('/') + 1);
  auto m = make_model(name, ck.config, std::move(ck.params), model::sha256_hex(bytes));
  m->step = ck.step;
  return m;
}

std::shared_ptr<LoadedModel> make_model(std::string name, const model::ModelConfig& config,
                                              model::ModelParams<float> params, std::string sha256) {
  auto m = std::make_shared<LoadedModel>();
  m->name = std::move(name);
  m->checkpoint_sha256 = std::move(sha256);
  m->config = config;
  m->parameter_count = params.parameter_count();
  m->engine = std::make_unique<inference::InpaintEngine>(config, std::move(params));
  return m;
}

Server::Server(ServerOptions options, std::shared_ptr<const LoadedModel> model)
    : options_(std::move(options)), model_(std::move(model)), http_(std::make_unique<httplib::Server>()) {
  install_routes();
}

Server::~Server() { stop(); }

void Server::install_routes() {
  auto& http = *http_;
  const std::string origin = options_.cors_origin;

  http.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
  });
  http.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Max-Age", "600");
  });
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send_json(res, 500, error_body("internal", what));
  });

  http.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    if (!model_) {
      send_json(res, 503, {{"status", "unavailable"}, {"message", "no model loaded"}});
      return;
    }
    send_json(res, 200,
              {{"status", "ok"},
               {"model", model_->name},
               {"checkpoint_sha256", model_->checkpoint_sha256},
               {"step", model_->step},
               {"parameters", model_->parameter_count},
               {"config", config_summary(model_->config)},
               {"active_sessions", active_.load()},
               {"max_sessions", options_.max_sessions}});
  });

  http.Post("/v1/inpaint", [this](const httplib::Request& req, httplib::Response& res) {
    if (!model_) {
      send_json(res, 503, error_body("unavailable", "no model loaded"));
      return;
    }
    inference::InpaintRequest request;
    try {
      const json body = json::parse(req.body);
      request = parse_inpaint_request(body, std::random_device{}());
    } catch (const json::parse_error& e) {
      send_json(res, 400, error_body("invalid_json", e.what()));
      return;
    } catch (const ApiError& e) {
      send_json(res, 400, error_body("invalid_request", "request failed validation", e.details()));
      return;
    }

    if (++active_ > options_.max_sessions) {
      --active_;
      send_json(res, 429, error_body("busy", "too many concurrent generations"));
      return;
    }
    auto session = std::make_shared<Session>(model_, std::move(request), active_);
    session->start();
    if (const auto failure = session->early_failure()) {
      send_json(res, 500, error_body("generation_failed", *failure));
      return;
    }

    res.set_header("Cache-Control", "no-cache");
    res.set_header("X-Accel-Buffering", "no");
    res.set_chunked_content_provider(
        "text/event-stream",
        [session](std::size_t, httplib::DataSink& sink) {
          std::string frame;
          bool failed = false;
          if (!session->next(frame, failed)) {
            sink.done();
            return true;
          }
          if (!sink.write(frame.data(), frame.size())) {
            session->cancel();
            return false;
          }
          return true;
        },
        [session](bool) { session->cancel(); });
  });
}

int Server::bind() {
  port_ = options_.port == 0 ? http_->bind_to_any_port(options_.host)
                             : (http_->bind_to_port(options_.host, options_.port) ? options_.port : -1);
  if (port_ < 0) throw std::runtime_error("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  return port_;
}

void Server::listen() { http_->listen_after_bind(); }

int Server::start() {
  const int p = bind();
  thread_ = std::thread([this] { listen(); });
  http_->wait_until_ready();
  return p;
}

void Server::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace pianofill::service
