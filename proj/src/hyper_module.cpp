#include "hyperedit/hyper_module.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "hyperedit/encoders.hpp"

namespace hyperedit {

namespace F = torch::nn::functional;

std::string to_string(Level level) {
  switch (level) {
    case Level::Shape: return "shape";
    case Level::Attribute: return "attribute";
    case Level::Style: return "style";
  }
  return "?";
}

Level level_from_string(const std::string& s) {
  if (s == "shape") return Level::Shape;
  if (s == "attribute") return Level::Attribute;
  if (s == "style") return Level::Style;
  throw InvalidInput("unknown edit level '" + s + "' (expected shape, attribute or style)");
}

Group group_for(Level level) {
  switch (level) {
    case Level::Shape: return Group::Coarse;
    case Level::Attribute: return Group::Medium;
    case Level::Style: return Group::Fine;
  }
  return Group::Fine;
}

Level level_for(Group group) {
  switch (group) {
    case Group::Coarse: return Level::Shape;
    case Group::Medium: return Level::Attribute;
    case Group::Fine: return Level::Style;
  }
  return Level::Style;
}

// --- GroupAssignment -------------------------------------------------------

GroupAssignment GroupAssignment::from_split(int coarse, int medium, int fine) {
  require(coarse >= 0 && medium >= 0 && fine >= 0, "group sizes must be non-negative");
  GroupAssignment g;
  g.coarse.clear();
  g.medium.clear();
  g.fine.clear();
  int index = 1;
  for (int i = 0; i < coarse; ++i) g.coarse.push_back(index++);
  for (int i = 0; i < medium; ++i) g.medium.push_back(index++);
  for (int i = 0; i < fine; ++i) g.fine.push_back(index++);
  return g;
}

GroupAssignment GroupAssignment::from_specs(const std::vector<LayerSpec>& specs) {
  GroupAssignment g;
  g.coarse.clear();
  g.medium.clear();
  g.fine.clear();
  for (const auto& s : specs) {
    switch (s.group) {
      case Group::Coarse: g.coarse.push_back(s.index); break;
      case Group::Medium: g.medium.push_back(s.index); break;
      case Group::Fine: g.fine.push_back(s.index); break;
    }
  }
  return g;
}

const std::vector<int>& GroupAssignment::members(Group g) const {
  switch (g) {
    case Group::Coarse: return coarse;
    case Group::Medium: return medium;
    case Group::Fine: return fine;
  }
  return fine;
}

Group GroupAssignment::group_of(int index) const {
  for (Group g : {Group::Coarse, Group::Medium, Group::Fine}) {
    const auto& m = members(g);
    if (std::find(m.begin(), m.end(), index) != m.end()) return g;
  }
  throw InvalidInput("layer " + std::to_string(index) + " belongs to no group");
}

void GroupAssignment::validate(int n_layers) const {
  std::set<int> seen;
  size_t total = 0;
  for (Group g : {Group::Coarse, Group::Medium, Group::Fine}) {
    for (int i : members(g)) {
      require(i >= 1 && i <= n_layers, "group member " + std::to_string(i) + " out of range");
      seen.insert(i);
      ++total;
    }
  }
  require(seen.size() == total, "layer groups overlap");
  require(static_cast<int>(total) == n_layers, "layer groups do not cover every editable layer");
}

double EditCoefficients::for_group(Group g) const {
  switch (g) {
    case Group::Coarse: return coarse;
    case Group::Medium: return medium;
    case Group::Fine: return fine;
  }
  return 0.0;
}

void EditCoefficients::validate() const {
  require(std::isfinite(coarse) && std::isfinite(medium) && std::isfinite(fine),
          "edit coefficients must be finite");
}

void PromptPair::validate() const {
  require(!src.empty() && !tgt.empty(), "prompt texts must be non-empty");
}

// --- HyperModule -----------------------------------------------------------

HyperModuleImpl::HyperModuleImpl(std::vector<LayerSpec> specs, GroupAssignment grouping,
                                 HyperConfig config)
    : specs_(std::move(specs)), grouping_(std::move(grouping)), config_(config) {
  require(!specs_.empty(), "hyper-module needs at least one editable layer");
  require(config_.embed_dim > 0 && config_.hidden > 0, "hyper-module dims must be positive");
  require(config_.sigma >= 0.0, "noise scale must be non-negative");
  grouping_.validate(static_cast<int>(specs_.size()));

  auto gen = at::make_generator<at::CPUGeneratorImpl>(config_.seed);
  auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  auto kaiming = [&](int64_t out, int64_t in) {
    const double bound = std::sqrt(6.0 / ((1.0 + config_.leaky_slope * config_.leaky_slope) * in));
    return ((torch::rand({out, in}, gen, f64) * 2.0 - 1.0) * bound).to(torch::kFloat32);
  };

  torch::NoGradGuard no_grad;
  for (size_t j = 0; j < specs_.size(); ++j) {
    int64_t numel = 1;
    for (auto s : specs_[j].shape) numel *= s;
    const std::string base = "h" + std::to_string(j + 1);
    Predictor p;
    p.fc1 = register_module(base + "_fc1", torch::nn::Linear(config_.embed_dim, config_.hidden));
    p.fc2 = register_module(base + "_fc2", torch::nn::Linear(config_.hidden, config_.hidden));
    p.out = register_module(base + "_out", torch::nn::Linear(config_.hidden, numel));
    p.fc1->weight.copy_(kaiming(config_.hidden, config_.embed_dim));
    p.fc1->bias.zero_();
    p.fc2->weight.copy_(kaiming(config_.hidden, config_.hidden));
    p.fc2->bias.zero_();
    p.out->weight.zero_();
    p.out->bias.zero_();
    p.gain = register_parameter(base + "_gain", torch::full({1}, config_.gain_init));
    predictors_.push_back(p);
  }
}

torch::Tensor HyperModuleImpl::predict_layer(size_t j, const torch::Tensor& direction) const {
  require(j < predictors_.size(), "predictor index out of range");
  const auto& p = predictors_[j];
  auto opts = F::LeakyReLUFuncOptions().negative_slope(config_.leaky_slope);
  auto f = direction.to(p.fc1->weight.scalar_type());
  auto h = F::leaky_relu(F::linear(f, p.fc1->weight, p.fc1->bias), opts);
  h = F::leaky_relu(F::linear(h, p.fc2->weight, p.fc2->bias), opts);
  return (F::linear(h, p.out->weight, p.out->bias) * p.gain).reshape(specs_[j].shape);
}

std::vector<std::pair<std::string, torch::Tensor>> HyperModuleImpl::predictor_tensors(
    size_t j) const {
  const auto& p = predictors_.at(j);
  const auto& n = specs_[j].name;
  return {{n + ".fc1.weight", p.fc1->weight}, {n + ".fc1.bias", p.fc1->bias},
          {n + ".fc2.weight", p.fc2->weight}, {n + ".fc2.bias", p.fc2->bias},
          {n + ".out.weight", p.out->weight}, {n + ".out.bias", p.out->bias},
          {n + ".gain", p.gain}};
}

// --- Operations ------------------------------------------------------------

DirectionFeature encode_direction(const std::string& src, const std::string& tgt, Level level,
                                  const JointEmbedder& embedder) {
  require(!src.empty() && !tgt.empty(), "encode_direction: texts must be non-empty");
  DirectionFeature f;
  f.vector = embedder.embed_text(tgt) - embedder.embed_text(src);
  f.level = level;
  f.src_text = src;
  f.tgt_text = tgt;
  return f;
}

DirectionFeature perturb_direction(const DirectionFeature& f, double sigma, uint64_t seed) {
  require(std::isfinite(sigma) && sigma >= 0.0, "perturb_direction: sigma must be >= 0");
  DirectionFeature out = f;
  if (sigma == 0.0) return out;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto noise = torch::randn(f.vector.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat64));
  out.vector = f.vector + (noise * sigma).to(f.vector.scalar_type());
  return out;
}

OffsetSet predict_offsets(const HyperModule& hyper,
                          const std::map<Level, DirectionFeature>& directions) {
  const auto& specs = hyper->specs();
  for (const auto& [level, f] : directions) {
    require(f.level == level, "predict_offsets: direction tagged " + to_string(f.level) +
                                  " supplied for level " + to_string(level));
    require(f.vector.defined() && f.vector.dim() == 1 &&
                f.vector.size(0) == hyper->config().embed_dim,
            "predict_offsets: direction must be a vector of dimension " +
                std::to_string(hyper->config().embed_dim));
    require(all_finite(f.vector), "predict_offsets: direction has non-finite entries");
  }

  const auto dtype = hyper->parameters().front().scalar_type();
  OffsetSet out;
  out.provenance = directions;
  for (size_t j = 0; j < specs.size(); ++j) {
    const Group g = hyper->grouping().group_of(specs[j].index);
    out.groups.push_back(g);
    auto it = directions.find(level_for(g));
    if (it == directions.end()) {
      out.offsets.push_back(torch::zeros(specs[j].shape, torch::TensorOptions().dtype(dtype)));
      out.active.push_back(false);
    } else {
      out.offsets.push_back(hyper->predict_layer(j, it->second.vector));
      out.active.push_back(true);
    }
  }
  return out;
}

std::vector<torch::Tensor> edited_layers(const GeneratorParams& theta, const OffsetSet& offsets,
                                         const EditCoefficients& coeffs) {
  coeffs.validate();
  require(offsets.offsets.size() == theta.layers.size() &&
              offsets.groups.size() == theta.layers.size(),
          "apply_offsets: offset count does not match the editable layers");
  std::vector<torch::Tensor> out;
  out.reserve(theta.layers.size());
  for (size_t j = 0; j < theta.layers.size(); ++j) {
    const auto& base = theta.layers[j];
    const auto& delta = offsets.offsets[j];
    require(delta.sizes() == base.sizes(),
            "apply_offsets: offset for " + theta.specs[j].name + " has shape " +
                shape_string(delta.sizes()) + ", layer is " + shape_string(base.sizes()));
    const double alpha = coeffs.for_group(offsets.groups[j]);
    const bool active = offsets.active.empty() || offsets.active[j];
    if (alpha == 0.0 || !active) {
      out.push_back(base);
    } else {
      out.push_back(base * (1.0 + alpha * delta.to(base.scalar_type())));
    }
  }
  return out;
}

GeneratorParams apply_offsets(const GeneratorParams& theta, const OffsetSet& offsets,
                              const EditCoefficients& coeffs) {
  GeneratorParams out;
  out.config = theta.config;
  out.specs = theta.specs;
  out.frozen = theta.frozen;
  out.layers = edited_layers(theta, offsets, coeffs);
  return out;
}

GeneratorParams compose_edit(const GeneratorParams& theta, const HyperModule& hyper,
                             const std::map<Level, PromptPair>& prompts,
                             const EditCoefficients& coeffs, const JointEmbedder& embedder,
                             double sigma, uint64_t seed) {
  require(!prompts.empty(), "compose_edit: at least one level must be requested");
  std::map<Level, DirectionFeature> directions;
  for (const auto& [level, prompt] : prompts) {
    prompt.validate();
    require(prompt.level == level, "compose_edit: prompt level does not match its key");
    auto f = encode_direction(prompt.src, prompt.tgt, level, embedder);
    directions.emplace(level, perturb_direction(f, sigma, seed * 3 + static_cast<uint64_t>(level)));
  }
  return apply_offsets(theta, predict_offsets(hyper, directions), coeffs);
}

// --- Checkpoints -----------------------------------------------------------

Json hyper_manifest(const HyperModule& hyper) {
  const auto& c = hyper->config();
  const auto& g = hyper->grouping();
  Json layers = Json::array();
  for (const auto& s : hyper->specs()) {
    layers.push_back({{"index", s.index}, {"name", s.name}, {"shape", s.shape}});
  }
  return {{"kind", "hyper"},
          {"version", 1},
          {"config",
           {{"embed_dim", c.embed_dim},
            {"hidden", c.hidden},
            {"gain_init", c.gain_init},
            {"sigma", c.sigma},
            {"leaky_slope", c.leaky_slope},
            {"seed", c.seed}}},
          {"grouping", {{"coarse", g.coarse}, {"medium", g.medium}, {"fine", g.fine}}},
          {"layers", layers}};
}

void save_hyper(const HyperModule& hyper, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  for (size_t j = 0; j < hyper->specs().size(); ++j) {
    for (auto& entry : hyper->predictor_tensors(j)) tensors.push_back(entry);
  }
  write_archive(path, hyper_manifest(hyper), tensors);
}

HyperModule hyper_from_archive(const Archive& archive, const GeneratorParams& generator) {
  const auto& m = archive.manifest;
  if (m.value("kind", "") != "hyper") throw CheckpointError("archive is not a hyper-module");
  if (m.value("version", 0) != 1) throw CheckpointError("unsupported hyper-module version");

  HyperConfig c;
  GroupAssignment g;
  try {
    const auto& mc = m.at("config");
    c.embed_dim = mc.at("embed_dim");
    c.hidden = mc.at("hidden");
    c.gain_init = mc.at("gain_init");
    c.sigma = mc.at("sigma");
    c.leaky_slope = mc.at("leaky_slope");
    c.seed = mc.at("seed");
    const auto& mg = m.at("grouping");
    g.coarse = mg.at("coarse").get<std::vector<int>>();
    g.medium = mg.at("medium").get<std::vector<int>>();
    g.fine = mg.at("fine").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("hyper-module manifest is malformed: ") + e.what());
  }

  // Layer table must match the paired generator exactly.
  std::string diff;
  const auto& layers = m.at("layers");
  if (layers.size() != generator.specs.size()) {
    diff += "layer count " + std::to_string(layers.size()) + " vs generator " +
            std::to_string(generator.specs.size()) + "; ";
  }
  for (size_t j = 0; j < std::min<size_t>(layers.size(), generator.specs.size()); ++j) {
    const auto& s = generator.specs[j];
    const auto name = layers[j].at("name").get<std::string>();
    const auto shape = layers[j].at("shape").get<std::vector<int64_t>>();
    if (name != s.name || shape != s.shape) {
      diff += "layer " + std::to_string(j + 1) + ": hyper " + name + shape_string(shape) +
              " vs generator " + s.name + shape_string(s.shape) + "; ";
    }
  }
  if (!diff.empty()) throw CheckpointError("hyper-module does not fit the generator: " + diff);

  HyperModule hyper(generator.specs, g, c);
  torch::NoGradGuard no_grad;
  size_t expected = 0;
  for (size_t j = 0; j < generator.specs.size(); ++j) {
    for (auto& [name, t] : hyper->predictor_tensors(j)) {
      const auto& src = archive.at(name);
      if (src.sizes() != t.sizes()) {
        throw CheckpointError("tensor '" + name + "' has shape " + shape_string(src.sizes()) +
                              ", expected " + shape_string(t.sizes()));
      }
      t.copy_(src);
      ++expected;
    }
  }
  if (archive.tensors.size() != expected) {
    throw CheckpointError("hyper-module archive holds unexpected extra tensors");
  }
  return hyper;
}

HyperModule load_hyper(const std::filesystem::path& path, const GeneratorParams& generator) {
  return hyper_from_archive(read_archive(path), generator);
}

HyperModule clone_hyper(const HyperModule& src) {
  HyperModule out(src->specs(), src->grouping(), src->config());
  out->to(src->parameters().front().scalar_type());
  torch::NoGradGuard no_grad;
  auto dst_params = out->parameters();
  auto src_params = src->parameters();
  for (size_t i = 0; i < dst_params.size(); ++i) dst_params[i].copy_(src_params[i]);
  return out;
}

}  // namespace hyperedit
