#pragma once

// HTTP front end: POST /v1/inpaint streams server-sent events, GET /v1/health
// reports the loaded checkpoint.

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include "pianofill/inference/engine.hpp"

namespace httplib {
class Server;
}

namespace pianofill::service {

struct LoadedModel {
  std::string name;
  std::string checkpoint_sha256;
  model::ModelConfig config;
  std::uint64_t step = 0;
  std::size_t parameter_count = 0;
  std::unique_ptr<inference::InpaintEngine> engine;
};

/// Reads, hashes and loads a checkpoint. Throws model::CheckpointError or std::runtime_error.
std::shared_ptr<const LoadedModel> load_model(const std::string& path);
std::shared_ptr<LoadedModel> make_model(std::string name, const model::ModelConfig& config,
                                              model::ModelParams<float> params, std::string sha256 = {});

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  int max_sessions = 4;
  std::string cors_origin = "*";
};

class Server {
 public:
  Server(ServerOptions options, std::shared_ptr<const LoadedModel> model);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the socket; returns the bound port. Throws std::runtime_error.
  int bind();
  /// Serves until stop(); requires bind().
  void listen();
  /// bind() plus listen() on a background thread.
  int start();
  void stop();

  int port() const { return port_; }
  int active_sessions() const { return active_.load(); }

 private:
  void install_routes();

  ServerOptions options_;
  std::shared_ptr<const LoadedModel> model_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  std::atomic<int> active_{0};
  int port_ = 0;
};

}  // namespace pianofill::service
