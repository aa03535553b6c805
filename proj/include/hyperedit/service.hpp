#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "hyperedit/edit_request.hpp"

namespace httplib {
class Server;
}

namespace hyperedit {

/// Everything the service needs, fixed at startup and shared read-only by workers.
struct ServiceState {
  GeneratorParams generator;
  HyperModule hyper{nullptr};
  EmbedderSuite embedders;
  std::vector<StylePreset> presets;
  std::string manifest_hash;  // sha256 over both checkpoint manifests
};

std::shared_ptr<const ServiceState> make_service_state(GeneratorParams generator, HyperModule hyper,
                                                       EmbedderSuite embedders,
                                                       std::vector<StylePreset> presets);
std::shared_ptr<const ServiceState> load_service_state(const std::filesystem::path& generator_ckpt,
                                                       const std::filesystem::path& hyper_ckpt,
                                                       const ExperimentConfig& config);

struct HttpReply {
  int status = 200;
  Json body;
};

/// Endpoint logic, independent of the transport.
HttpReply handle_health(const ServiceState& state);
HttpReply handle_styles(const ServiceState& state);
HttpReply handle_edit(const ServiceState& state, const std::string& body);

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  int workers = 4;
};

class EditService {
 public:
  EditService(std::shared_ptr<const ServiceState> state, ServiceOptions options);
  ~EditService();

  /// Binds the socket; returns the bound port.
  int bind();
  /// Serves until stop(). Call bind() first.
  void listen();
  void stop();

 private:
  std::shared_ptr<const ServiceState> state_;
  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace hyperedit
