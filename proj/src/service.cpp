#include "hyperedit/service.hpp"


#include <atomic>
#include <chrono>
#include <random>

#include "httplib.h"
#include "hyperedit/image_io.hpp"
#include "hyperedit/log.hpp"

namespace hyperedit {

std::shared_ptr<const ServiceState> make_service_state(GeneratorParams generator, HyperModule hyper,
                                                       EmbedderSuite embedders,
                                                       std::vector<StylePreset> presets) {
  require(embedders.joint != nullptr, "service needs a joint embedder");
  generator.validate();
  for (auto& t : generator.layers) t.requires_grad_(false);
  for (auto& p : hyper->parameters()) p.requires_grad_(false);
  hyper->eval();
  auto state = std::make_shared<ServiceState>();
  state->manifest_hash = sha256_hex(manifest_hash(generator_manifest(generator)) +
                                    manifest_hash(hyper_manifest(hyper)));
  state->generator = std::move(generator);
  state->hyper = std::move(hyper);
  state->embedders = std::move(embedders);
  state->presets = std::move(presets);
  return state;
}

std::shared_ptr<const ServiceState> load_service_state(const std::filesystem::path& generator_ckpt,
                                                       const std::filesystem::path& hyper_ckpt,
                                                       const ExperimentConfig& config) {
  auto generator = load_generator(generator_ckpt);
  auto hyper = load_hyper(hyper_ckpt, generator);
  return make_service_state(std::move(generator), std::move(hyper),
                            load_embedders(config.embedders), config.styles);
}

namespace {

std::string incident_id() {
  static std::atomic<uint64_t> counter{0};
  static const uint64_t salt = std::random_device{}();
  const uint64_t now = static_cast<uint64_t>(
      std::chrono::system_clock::now().time_since_epoch().count());
  return sha256_hex(std::to_string(salt) + ":" + std::to_string(now) + ":" +
                    std::to_string(counter++))
      .substr(0, 16);
}

Json envelope(const ServiceState& state) {
  return Json{{"schema_version", kEditSchemaVersion}, {"manifest_hash", state.manifest_hash}};
}

Json image_json(const torch::Tensor& img, const CameraPose* pose) {
  Json j;
  if (pose) j["pose"] = pose_to_json(*pose);
  j["width"] = img.size(1);
  j["height"] = img.size(0);
  j["png_base64"] = base64_encode(encode_png(img));
  return j;
}

}  // namespace

HttpReply handle_health(const ServiceState& state) {
  auto body = envelope(state);
  body["status"] = "ok";
  return {200, body};
}

HttpReply handle_styles(const ServiceState& state) {
  auto body = envelope(state);
  body["styles"] = Json::array();
  for (const auto& s : state.presets) {
    Json preset{{"name", s.name}, {"prompts", Json::array()}};
    for (const auto& p : s.prompts) preset["prompts"].push_back(prompt_to_json(p));
    body["styles"].push_back(preset);
  }
  return {200, body};
}

HttpReply handle_edit(const ServiceState& state, const std::string& raw) {
  EditRequest request;
  try {
    request = parse_edit_request(Json::parse(raw), state.presets);
  } catch (const std::exception& e) {
    auto body = envelope(state);
    body["error"] = {{"code", "bad_request"}, {"message", e.what()}};
    return {400, body};
  }
  try {
    const auto result =
        run_edit(state.generator, state.hyper, *state.embedders.joint, request);
    auto body = envelope(state);
    body["request"] = edit_request_to_json(request);
    body["images"] = Json::array();
    for (size_t i = 0; i < result.edited.size(); ++i) {
      body["images"].push_back(image_json(result.edited[i], &request.poses[i]));
    }
    if (request.with_base) {
      body["base_images"] = Json::array();
      for (size_t i = 0; i < result.base.size(); ++i) {
        body["base_images"].push_back(image_json(result.base[i], &request.poses[i]));
      }
    }
    if (result.grid.defined()) body["grid"] = image_json(result.grid, nullptr);
    return {200, body};
  } catch (const std::exception& e) {
    const auto id = incident_id();
    log::error("edit failed (incident " + id + "): " + e.what());
    auto body = envelope(state);
    body["error"] = {{"code", "render_failed"}, {"incident_id", id},
                     {"message", "rendering failed; quote the incident id"}};
    return {500, body};
  }
}

EditService::EditService(std::shared_ptr<const ServiceState> state, ServiceOptions options)
    : state_(std::move(state)), options_(std::move(options)),
      server_(std::make_unique<httplib::Server>()) {
  require(state_ != nullptr, "service state is null");
  require(options_.workers >= 1, "workers must be >= 1");
  const size_t workers = static_cast<size_t>(options_.workers);
  server_->new_task_queue = [workers] { return new httplib::ThreadPool(workers); };

  auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  auto shared = state_;
  server_->Get("/health", [shared, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_health(*shared));
  });
  server_->Get("/styles", [shared, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_styles(*shared));
  });
  server_->Post("/edit", [shared, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_edit(*shared, req.body));
  });
}

EditService::~EditService() { stop(); }

int EditService::bind() {
  int port = options_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(options_.host);
  } else if (!server_->bind_to_port(options_.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw std::runtime_error("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  }
  return port;
}

void EditService::listen() { server_->listen_after_bind(); }

void EditService::stop() {
  if (server_) server_->stop();
}

}  // namespace hyperedit
