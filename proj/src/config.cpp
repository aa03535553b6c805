#include "hyperedit/config.hpp"

#include <fstream>

namespace hyperedit {

ConfigReader::ConfigReader(const Json& object, std::string path)
    : object_(object), path_(std::move(path)) {
  if (!object_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
}

bool ConfigReader::has(const std::string& key) const { return object_.contains(key); }

const Json& ConfigReader::raw(const std::string& key) {
  if (!has(key)) throw ConfigError(join(key), "missing required key");
  used_.insert(key);
  return object_.at(key);
}

ConfigReader ConfigReader::child(const std::string& key) { return ConfigReader(raw(key), join(key)); }

std::string ConfigReader::join(const std::string& key) const {
  return path_.empty() ? key : path_ + "." + key;
}

void ConfigReader::finish() const {
  for (const auto& [key, value] : object_.items()) {
    if (!used_.count(key)) throw ConfigError(join(key), "unknown key");
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot open " + path.string());
  try {
    return Json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

PromptPair prompt_from_json(const Json& j, const std::string& path) {
  ConfigReader r(j, path);
  PromptPair p;
  try {
    p.level = level_from_string(r.required<std::string>("level"));
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidInput& e) {
    throw ConfigError(r.join("level"), e.what());
  }
  p.src = r.required<std::string>("src");
  p.tgt = r.required<std::string>("tgt");
  r.finish();
  if (p.src.empty() || p.tgt.empty()) throw ConfigError(path, "prompt texts must be non-empty");
  return p;
}

Json prompt_to_json(const PromptPair& p) {
  return Json{{"level", to_string(p.level)}, {"src", p.src}, {"tgt", p.tgt}};
}

namespace {

GeneratorConfig parse_generator(ConfigReader r) {
  GeneratorConfig g;
  g.latent_dim = r.optional("latent_dim", g.latent_dim);
  g.width = r.optional("width", g.width);
  g.feature_dim = r.optional("feature_dim", g.feature_dim);
  g.feature_res = r.optional("feature_res", g.feature_res);
  g.upscale_stages = r.optional("upscale_stages", g.upscale_stages);
  g.render_steps = r.optional("render_steps", g.render_steps);
  g.mapping_layers = r.optional("mapping_layers", g.mapping_layers);
  g.trunk_layers = r.optional("trunk_layers", g.trunk_layers);
  g.appearance_layers = r.optional("appearance_layers", g.appearance_layers);
  g.first_layer_frequency = r.optional("first_layer_frequency", g.first_layer_frequency);
  g.base_sphere_radius = r.optional("base_sphere_radius", g.base_sphere_radius);
  g.bound_radius = r.optional("bound_radius", g.bound_radius);
  g.group_split = r.optional("group_split", g.group_split);
  r.finish();
  try {
    g.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError("generator", e.what());
  }
  return g;
}

PretrainConfig parse_pretrain(ConfigReader r) {
  PretrainConfig p;
  p.iterations = r.optional("iterations", p.iterations);
  p.batch = r.optional("batch", p.batch);
  p.lr = r.optional("lr", p.lr);
  p.sdf_points = r.optional("sdf_points", p.sdf_points);
  p.color_points = r.optional("color_points", p.color_points);
  p.feature_res = r.optional("feature_res", p.feature_res);
  p.render_steps = r.optional("render_steps", p.render_steps);
  p.max_yaw = r.optional("max_yaw", p.max_yaw);
  p.max_pitch = r.optional("max_pitch", p.max_pitch);
  p.seed = r.optional("seed", p.seed);
  r.finish();
  return p;
}

HyperConfig parse_hyper(ConfigReader r, std::optional<std::array<int, 3>>& split) {
  HyperConfig h;
  h.embed_dim = r.optional("embed_dim", h.embed_dim);
  h.hidden = r.optional("hidden", h.hidden);
  h.gain_init = r.optional("gain_init", h.gain_init);
  h.sigma = r.optional("sigma", h.sigma);
  h.leaky_slope = r.optional("leaky_slope", h.leaky_slope);
  h.seed = r.optional("seed", h.seed);
  if (r.has("split")) split = r.required<std::array<int, 3>>("split");
  r.finish();
  return h;
}

TrainingConfig parse_training(ConfigReader r) {
  TrainingConfig t;
  {
    auto l = r.child("lambda");
    t.lambda.dir = l.required<double>("dir");
    t.lambda.id = l.required<double>("id");
    t.lambda.region = l.required<double>("region");
    l.finish();
  }
  t.views = r.optional("views", t.views);
  t.id_yaws = r.optional("id_yaws", t.id_yaws);
  t.batch = r.optional("batch", t.batch);
  t.lr = r.optional("lr", t.lr);
  t.steps = r.optional("steps", t.steps);
  t.sigma = r.optional("sigma", t.sigma);
  t.seed = r.optional("seed", t.seed);
  t.checkpoint_every = r.optional("checkpoint_every", t.checkpoint_every);
  t.feature_res = r.optional("feature_res", t.feature_res);
  t.render_steps = r.optional("render_steps", t.render_steps);
  t.max_yaw = r.optional("max_yaw", t.max_yaw);
  r.finish();
  return t;
}

EvalConfig parse_evaluation(ConfigReader r) {
  EvalConfig e;
  e.n_identities = r.optional("n_identities", e.n_identities);
  e.seed = r.optional("seed", e.seed);
  e.depth_res = r.optional("depth_res", e.depth_res);
  e.id_res = r.optional("id_res", e.id_res);
  e.render_steps = r.optional("render_steps", e.render_steps);
  e.side_yaw_min = r.optional("side_yaw_min", e.side_yaw_min);
  e.side_yaw_max = r.optional("side_yaw_max", e.side_yaw_max);
  e.rvis_factor = r.optional("rvis_factor", e.rvis_factor);
  if (r.has("side_yaw_override") && !r.raw("side_yaw_override").is_null()) {
    e.side_yaw_override = r.required<double>("side_yaw_override");
  }
  e.id_against_base = r.optional("id_against_base", e.id_against_base);
  r.finish();
  return e;
}

}  // namespace

ExperimentConfig parse_experiment(const Json& root) {
  ConfigReader r(root, "");
  ExperimentConfig c;
  if (r.has("generator")) c.generator = parse_generator(r.child("generator"));
  if (r.has("pretrain")) c.pretrain = parse_pretrain(r.child("pretrain"));
  if (r.has("hyper")) c.hyper = parse_hyper(r.child("hyper"), c.hyper_split);
  if (r.has("training")) {
    c.training = parse_training(r.child("training"));
    c.has_training = true;
  }
  c.training.hyper = c.hyper;
  c.training.hyper.sigma = c.training.sigma;
  if (r.has("prompt_bank")) {
    const auto& bank = r.raw("prompt_bank");
    if (!bank.is_array()) throw ConfigError("prompt_bank", "must be an array");
    for (size_t i = 0; i < bank.size(); ++i) {
      c.training.prompt_bank.push_back(prompt_from_json(bank[i], "prompt_bank[" + std::to_string(i) + "]"));
    }
  }
  if (r.has("styles")) {
    const auto& styles = r.raw("styles");
    if (!styles.is_array()) throw ConfigError("styles", "must be an array");
    for (size_t i = 0; i < styles.size(); ++i) {
      const std::string path = "styles[" + std::to_string(i) + "]";
      ConfigReader s(styles[i], path);
      StylePreset preset;
      preset.name = s.required<std::string>("name");
      const auto& prompts = s.raw("prompts");
      if (!prompts.is_array() || prompts.empty()) {
        throw ConfigError(s.join("prompts"), "must be a non-empty array");
      }
      for (size_t k = 0; k < prompts.size(); ++k) {
        preset.prompts.push_back(
            prompt_from_json(prompts[k], s.join("prompts") + "[" + std::to_string(k) + "]"));
      }
      s.finish();
      c.styles.push_back(std::move(preset));
    }
  }
  if (r.has("evaluation")) c.evaluation = parse_evaluation(r.child("evaluation"));
  if (r.has("embedders")) c.embedders = r.raw("embedders");
  r.finish();
  if (c.has_training) {
    try {
      c.training.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const InvalidInput& e) {
      throw ConfigError("training", e.what());
    }
  }
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return parse_experiment(read_json_file(path));
}

}  // namespace hyperedit
