#include "hyperedit/edit_request.hpp"

#include <cmath>

#include "hyperedit/image_io.hpp"

namespace hyperedit {

void EditRequest::validate() const {
  require(!prompts.empty(), "edit request needs at least one level");
  for (const auto& [level, p] : prompts) {
    p.validate();
    require(p.level == level, "prompt level does not match its key");
  }
  alphas.validate();
  require(!poses.empty(), "edit request needs at least one pose");
  for (const auto& p : poses) p.validate();
}

Json pose_to_json(const CameraPose& pose) {
  return Json{{"yaw", pose.yaw}, {"pitch", pose.pitch}, {"radius", pose.radius}, {"fov", pose.fov}};
}

namespace {

CameraPose pose_from_json(const Json& j, const std::string& path) {
  ConfigReader r(j, path);
  CameraPose p;
  p.yaw = r.required<double>("yaw");
  p.pitch = r.optional("pitch", p.pitch);
  p.radius = r.optional("radius", p.radius);
  p.fov = r.optional("fov", p.fov);
  r.finish();
  try {
    p.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(path, e.what());
  }
  return p;
}

}  // namespace

EditRequest parse_edit_request(const Json& body, const std::vector<StylePreset>& presets) {
  ConfigReader r(body, "");
  const int version = r.required<int>("schema_version");
  if (version != kEditSchemaVersion) {
    throw ConfigError("schema_version", "unsupported version " + std::to_string(version) +
                                            " (expected " + std::to_string(kEditSchemaVersion) + ")");
  }
  EditRequest req;
  if (r.has("prompts")) {
    auto pr = r.child("prompts");
    for (Level level : kAllLevels) {
      const auto name = to_string(level);
      if (!pr.has(name)) continue;
      auto one = pr.child(name);
      PromptPair p;
      p.level = level;
      p.src = one.required<std::string>("src");
      p.tgt = one.required<std::string>("tgt");
      one.finish();
      if (p.src.empty() || p.tgt.empty()) throw ConfigError(pr.join(name), "texts must be non-empty");
      req.prompts[level] = p;
    }
    pr.finish();
  }
  if (r.has("style_preset")) {
    const auto name = r.required<std::string>("style_preset");
    const StylePreset* found = nullptr;
    for (const auto& s : presets) {
      if (s.name == name) found = &s;
    }
    if (!found) throw ConfigError("style_preset", "unknown preset '" + name + "'");
    for (const auto& p : found->prompts) {
      if (req.prompts.count(p.level)) {
        throw ConfigError("style_preset", "preset sets level " + to_string(p.level) +
                                              " which the request already sets");
      }
      req.prompts[p.level] = p;
    }
    req.style_preset = name;
  }
  if (req.prompts.empty()) throw ConfigError("prompts", "at least one level must be requested");

  if (r.has("alphas")) {
    auto a = r.child("alphas");
    req.alphas.coarse = a.optional("coarse", req.alphas.coarse);
    req.alphas.medium = a.optional("medium", req.alphas.medium);
    req.alphas.fine = a.optional("fine", req.alphas.fine);
    a.finish();
    if (!std::isfinite(req.alphas.coarse) || !std::isfinite(req.alphas.medium) ||
        !std::isfinite(req.alphas.fine)) {
      throw ConfigError("alphas", "coefficients must be finite");
    }
  }
  req.seed = r.optional("seed", req.seed);
  if (r.has("poses")) {
    const auto& poses = r.raw("poses");
    if (!poses.is_array() || poses.empty()) throw ConfigError("poses", "must be a non-empty array");
    req.poses.clear();
    for (size_t i = 0; i < poses.size(); ++i) {
      req.poses.push_back(pose_from_json(poses[i], "poses[" + std::to_string(i) + "]"));
    }
  }
  req.with_base = r.optional("with_base", req.with_base);
  req.grid = r.optional("grid", req.grid);
  r.finish();
  req.validate();
  return req;
}

Json edit_request_to_json(const EditRequest& req) {
  Json j;
  j["schema_version"] = kEditSchemaVersion;
  Json prompts = Json::object();
  for (const auto& [level, p] : req.prompts) prompts[to_string(level)] = {{"src", p.src}, {"tgt", p.tgt}};
  j["prompts"] = prompts;
  j["alphas"] = {{"coarse", req.alphas.coarse}, {"medium", req.alphas.medium}, {"fine", req.alphas.fine}};
  j["seed"] = req.seed;
  j["poses"] = Json::array();
  for (const auto& p : req.poses) j["poses"].push_back(pose_to_json(p));
  j["with_base"] = req.with_base;
  j["grid"] = req.grid;
  return j;
}

EditResult run_edit(const GeneratorParams& theta, const HyperModule& hyper,
                    const JointEmbedder& embedder, const EditRequest& request) {
  request.validate();
  torch::NoGradGuard no_grad;
  const auto edited = compose_edit(theta, hyper, request.prompts, request.alphas, embedder);
  const auto z = sample_z(theta.config, request.seed, theta.dtype());
  EditResult out;
  for (const auto& pose : request.poses) {
    out.edited.push_back(generate(edited, z, pose).image);
    if (request.with_base) out.base.push_back(generate(theta, z, pose).image);
  }
  if (request.grid) {
    std::vector<std::vector<torch::Tensor>> rows;
    if (request.with_base) rows.push_back(out.base);
    rows.push_back(out.edited);
    out.grid = image_grid(rows);
  }
  return out;
}

}  // namespace hyperedit
