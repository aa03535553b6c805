#include "hyperedit/generator.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace hyperedit {

namespace F = torch::nn::functional;

std::string to_string(Group g) {
  switch (g) {
    case Group::Coarse: return "coarse";
    case Group::Medium: return "medium";
    case Group::Fine: return "fine";
  }
  return "?";
}

Group group_from_string(const std::string& s) {
  if (s == "coarse") return Group::Coarse;
  if (s == "medium") return Group::Medium;
  if (s == "fine") return Group::Fine;
  throw InvalidInput("unknown layer group '" + s + "'");
}

void GeneratorConfig::validate() const {
  require(latent_dim > 0 && width > 0, "generator dims must be positive");
  require(feature_dim > 3, "feature_dim must exceed the 3 color channels");
  require(feature_res > 0 && render_steps >= 2, "bad render resolution/steps");
  require(upscale_stages >= 0 && upscale_stages <= 4, "upscale_stages out of range");
  require(mapping_layers >= 1 && trunk_layers >= 1 && appearance_layers >= 1,
          "layer counts must be positive");
  require(group_split[0] >= 0 && group_split[1] >= 0 && group_split[2] >= 0 &&
              group_split[0] + group_split[1] + group_split[2] == editable_layers(),
          "group split must partition the editable layers");
  require(bound_radius > 0 && base_sphere_radius > 0 && base_sphere_radius < bound_radius,
          "bad scene bounds");
}

std::vector<LayerSpec> layer_specs(const GeneratorConfig& config) {
  config.validate();
  std::vector<LayerSpec> specs;
  const int64_t w = config.width;
  for (int i = 0; i < config.trunk_layers; ++i) {
    specs.push_back({0, "field.trunk" + std::to_string(i), Group::Coarse,
                     {w, i == 0 ? int64_t{3} : w}});
  }
  // The last appearance layer is the linear projection to point features.
  for (int i = 0; i < config.appearance_layers; ++i) {
    const bool last = i + 1 == config.appearance_layers;
    specs.push_back({0, last ? std::string("field.to_feature") : "field.app" + std::to_string(i),
                     Group::Coarse, {last ? int64_t{config.feature_dim} : w, i == 0 ? w + 3 : w}});
  }
  const int c = config.group_split[0];
  const int m = config.group_split[1];
  for (size_t j = 0; j < specs.size(); ++j) {
    const int index = static_cast<int>(j) + 1;
    specs[j].index = index;
    specs[j].group = index <= c ? Group::Coarse : index <= c + m ? Group::Medium : Group::Fine;
  }
  return specs;
}

const torch::Tensor& GeneratorParams::frozen_at(const std::string& name) const {
  auto it = frozen.find(name);
  require(it != frozen.end(), "generator parameter '" + name + "' missing");
  return it->second;
}

GeneratorParams GeneratorParams::clone(std::optional<torch::ScalarType> dtype) const {
  GeneratorParams out;
  out.config = config;
  out.specs = specs;
  auto copy = [&](const torch::Tensor& t) {
    return dtype ? t.detach().to(*dtype).clone() : t.detach().clone();
  };
  for (const auto& t : layers) out.layers.push_back(copy(t));
  for (const auto& [k, v] : frozen) out.frozen.emplace(k, copy(v));
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> GeneratorParams::named_tensors() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (size_t j = 0; j < specs.size(); ++j) out.emplace_back(specs[j].name, layers[j]);
  for (const auto& [k, v] : frozen) out.emplace_back(k, v);
  return out;
}

void GeneratorParams::validate() const {
  config.validate();
  require(specs == layer_specs(config), "layer specs disagree with the generator config");
  require(layers.size() == specs.size(), "editable layer count mismatch");
  for (size_t j = 0; j < specs.size(); ++j) {
    require(layers[j].sizes().vec() == specs[j].shape,
            "layer " + specs[j].name + " has shape " + shape_string(layers[j].sizes()) +
                ", expected " + shape_string(specs[j].shape));
  }
}

namespace {

struct Init {
  at::Generator gen;
  torch::TensorOptions opts = torch::TensorOptions().dtype(torch::kFloat64);

  torch::Tensor normal(std::vector<int64_t> shape, double std) {
    return torch::randn(shape, gen, opts) * std;
  }
  torch::Tensor uniform(std::vector<int64_t> shape, double bound) {
    return (torch::rand(shape, gen, opts) * 2.0 - 1.0) * bound;
  }
  torch::Tensor zeros(std::vector<int64_t> shape) { return torch::zeros(shape, opts); }
};

int upsampler_channels(const GeneratorConfig& config, int stage) {
  return std::max(8, config.feature_dim >> (stage - 1));
}

double layer_frequency(const GeneratorParams& params, size_t j) {
  return j == 0 ? params.config.first_layer_frequency : 1.0;
}

torch::Tensor film_layer(const GeneratorParams& params, size_t j, const torch::Tensor& weight,
                         const torch::Tensor& input, const torch::Tensor& w) {
  const auto& name = params.specs[j].name;
  auto pre = F::linear(input, weight, params.frozen_at(name + ".bias"));
  auto scale = 1.0 + F::linear(w, params.frozen_at(name + ".film_scale"),
                               params.frozen_at(name + ".film_scale_bias"));
  auto shift = F::linear(w, params.frozen_at(name + ".film_shift"),
                         params.frozen_at(name + ".film_shift_bias"));
  return torch::sin(layer_frequency(params, j) * scale * pre + shift);
}

torch::Tensor replicate_conv(const torch::Tensor& x, const torch::Tensor& weight,
                             const torch::Tensor& bias) {
  const int64_t pad = weight.size(-1) / 2;
  auto padded = pad > 0 ? F::pad(x, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReplicate))
                        : x;
  return F::conv2d(padded, weight, F::Conv2dFuncOptions().bias(bias));
}

torch::Tensor upsample2x(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{x.size(2) * 2, x.size(3) * 2})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

GeneratorParams init_generator(const GeneratorConfig& config, uint64_t seed,
                               torch::ScalarType dtype) {
  config.validate();
  Init init{at::make_generator<at::CPUGeneratorImpl>(seed)};
  GeneratorParams p;
  p.config = config;
  p.specs = layer_specs(config);

  const int64_t L = config.latent_dim;
  const int64_t W = config.width;
  const int64_t C = config.feature_dim;

  for (int i = 0; i < config.mapping_layers; ++i) {
    const std::string n = "mapping.l" + std::to_string(i);
    p.frozen[n + ".weight"] = init.normal({L, L}, std::sqrt(2.0 / L));
    p.frozen[n + ".bias"] = init.normal({L}, 0.1);
  }
  for (const auto& spec : p.specs) {
    const int64_t fan_in = spec.shape[1];
    torch::Tensor weight = spec.index == 1 ? init.uniform(spec.shape, 1.0)
                                           : init.uniform(spec.shape, std::sqrt(6.0 / fan_in));
    p.layers.push_back(weight);
    if (spec.name == "field.to_feature") {
      p.frozen[spec.name + ".bias"] = init.zeros({C});
      continue;
    }
    p.frozen[spec.name + ".bias"] = init.uniform({W}, 0.1);
    p.frozen[spec.name + ".film_scale"] = init.normal({W, L}, 0.1 / std::sqrt(double(L)));
    p.frozen[spec.name + ".film_scale_bias"] = init.zeros({W});
    p.frozen[spec.name + ".film_shift"] = init.normal({W, L}, 0.5 / std::sqrt(double(L)));
    p.frozen[spec.name + ".film_shift_bias"] = init.zeros({W});
  }
  p.frozen["field.sdf_head.weight"] = init.normal({1, W}, 0.01);
  p.frozen["field.sdf_head.bias"] = init.zeros({1});
  p.frozen["field.log_beta"] = torch::full({1}, std::log(0.04), init.opts);
  p.frozen["render.background_feature"] = init.zeros({C});

  int64_t in_ch = C;
  p.frozen["upsampler.torgb0.weight"] = init.normal({3, C, 1, 1}, 1.0 / std::sqrt(double(C)));
  p.frozen["upsampler.torgb0.bias"] = init.zeros({3});
  for (int k = 1; k <= config.upscale_stages; ++k) {
    const int64_t out_ch = upsampler_channels(config, k);
    const std::string n = "upsampler.stage" + std::to_string(k);
    p.frozen[n + ".conv.weight"] =
        init.normal({out_ch, in_ch, 3, 3}, std::sqrt(2.0 / (in_ch * 9.0)));
    p.frozen[n + ".conv.bias"] = init.zeros({out_ch});
    p.frozen[n + ".torgb.weight"] =
        init.normal({3, out_ch, 1, 1}, 0.1 / std::sqrt(double(out_ch)));
    p.frozen[n + ".torgb.bias"] = init.zeros({3});
    in_ch = out_ch;
  }
  return p.clone(dtype);
}

torch::Tensor sample_z(const GeneratorConfig& config, uint64_t seed, torch::ScalarType dtype) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn({config.latent_dim}, gen, torch::TensorOptions().dtype(torch::kFloat64))
      .to(dtype);
}

torch::Tensor map_latent(const GeneratorParams& params, const torch::Tensor& z) {
  require(z.defined() && z.dim() == 1 && z.size(0) == params.config.latent_dim,
          "latent z must be a vector of dimension " + std::to_string(params.config.latent_dim));
  require(all_finite(z), "latent z has non-finite entries");
  auto h = z.to(params.dtype());
  for (int i = 0; i < params.config.mapping_layers; ++i) {
    const std::string n = "mapping.l" + std::to_string(i);
    h = F::linear(h, params.frozen_at(n + ".weight"), params.frozen_at(n + ".bias"));
    if (i + 1 < params.config.mapping_layers) h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
  }
  return h;
}

LatentCode make_latent(const GeneratorParams& params, const torch::Tensor& z) {
  return {z, map_latent(params, z)};
}

FieldBatch field_forward(const GeneratorParams& params, std::span<const torch::Tensor> layers,
                         const torch::Tensor& w, const torch::Tensor& x, const torch::Tensor& d,
                         bool need_appearance) {
  const auto& cfg = params.config;
  require(layers.size() == params.specs.size(), "field_forward: wrong number of layer tensors");
  require(x.dim() == 2 && x.size(1) == 3 && d.sizes() == x.sizes(),
          "field_forward: points and directions must be [P,3]");

  auto h = x;
  for (int j = 0; j < cfg.trunk_layers; ++j) h = film_layer(params, j, layers[j], h, w);

  FieldBatch out;
  out.sdf = x.norm(2, -1) - cfg.base_sphere_radius +
            F::linear(h, params.frozen_at("field.sdf_head.weight"),
                      params.frozen_at("field.sdf_head.bias"))
                .squeeze(-1);
  if (!need_appearance) return out;

  auto a = torch::cat({h, d}, -1);
  for (int k = 0; k + 1 < cfg.appearance_layers; ++k) {
    const size_t j = static_cast<size_t>(cfg.trunk_layers + k);
    a = film_layer(params, j, layers[j], a, w);
  }
  const size_t last = layers.size() - 1;
  auto raw = F::linear(a, layers[last], params.frozen_at(params.specs[last].name + ".bias"));
  out.color = torch::sigmoid(raw.narrow(-1, 0, 3));
  out.feature = torch::cat({out.color, raw.narrow(-1, 3, raw.size(-1) - 3)}, -1);
  return out;
}

FieldSample sample_field(const GeneratorParams& params, const std::array<double, 3>& x,
                         const std::array<double, 3>& d, const torch::Tensor& w) {
  for (int i = 0; i < 3; ++i) {
    require(std::isfinite(x[i]) && std::isfinite(d[i]), "sample_field: non-finite input");
  }
  const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  require(std::abs(norm - 1.0) < 1e-6, "sample_field: view direction must be unit length");
  require(all_finite(w), "sample_field: non-finite latent");

  torch::NoGradGuard no_grad;
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto xt = torch::tensor({x[0], x[1], x[2]}, opts).to(params.dtype()).reshape({1, 3});
  auto dt = torch::tensor({d[0], d[1], d[2]}, opts).to(params.dtype()).reshape({1, 3});
  auto f = field_forward(params, params.layers, w.to(params.dtype()), xt, dt, true);

  FieldSample s;
  s.sdf = f.sdf.item<double>();
  auto color = f.color.to(torch::kFloat64).reshape({3});
  for (int i = 0; i < 3; ++i) s.color[i] = color[i].item<double>();
  auto feat = f.feature.to(torch::kFloat64).reshape({-1}).contiguous();
  s.feature.assign(feat.data_ptr<double>(), feat.data_ptr<double>() + feat.numel());
  return s;
}

torch::Tensor density_beta(const GeneratorParams& params) {
  return torch::exp(params.frozen_at("field.log_beta")).reshape({});
}

RenderSettings native_settings(const GeneratorConfig& config) {
  RenderSettings s;
  s.height = s.width = config.feature_res;
  s.steps = config.render_steps;
  s.bound_radius = config.bound_radius;
  return s;
}

VolumeRenderResult render_field(const GeneratorParams& params,
                                std::span<const torch::Tensor> layers, const torch::Tensor& w,
                                const CameraPose& pose, const RenderSettings& settings) {
  FieldFn field = [&](const torch::Tensor& x, const torch::Tensor& d, bool appearance) {
    return field_forward(params, layers, w, x, d, appearance);
  };
  return volume_render(field, pose, settings, density_beta(params),
                       params.frozen_at("render.background_feature"));
}

torch::Tensor upsample(const GeneratorParams& params, const torch::Tensor& feature_map) {
  const auto& cfg = params.config;
  require(feature_map.defined() && feature_map.dim() == 3 &&
              feature_map.size(2) == cfg.feature_dim && feature_map.size(0) > 0 &&
              feature_map.size(1) > 0,
          "upsample: feature map must be [h, w, " + std::to_string(cfg.feature_dim) + "]");
  require(all_finite(feature_map), "upsample: non-finite feature map");

  auto x = feature_map.to(params.dtype()).permute({2, 0, 1}).unsqueeze(0);
  auto rgb = F::conv2d(x, params.frozen_at("upsampler.torgb0.weight"),
                       F::Conv2dFuncOptions().bias(params.frozen_at("upsampler.torgb0.bias")));
  for (int k = 1; k <= cfg.upscale_stages; ++k) {
    const std::string n = "upsampler.stage" + std::to_string(k);
    x = upsample2x(x);
    x = F::leaky_relu(replicate_conv(x, params.frozen_at(n + ".conv.weight"),
                                     params.frozen_at(n + ".conv.bias")),
                      F::LeakyReLUFuncOptions().negative_slope(0.2));
    rgb = upsample2x(rgb) + F::conv2d(x, params.frozen_at(n + ".torgb.weight"),
                                      F::Conv2dFuncOptions().bias(params.frozen_at(n + ".torgb.bias")));
  }
  return torch::sigmoid(rgb).squeeze(0).permute({1, 2, 0});
}

RenderOutput generate(const GeneratorParams& params, const torch::Tensor& z,
                      const CameraPose& pose) {
  return generate(params, z, pose, native_settings(params.config));
}

RenderOutput generate(const GeneratorParams& params, const torch::Tensor& z,
                      const CameraPose& pose, const RenderSettings& settings) {
  return substitute_forward(params, params.layers, z, pose, settings);
}

RenderOutput substitute_forward(const GeneratorParams& params,
                                std::span<const torch::Tensor> replacement,
                                const torch::Tensor& z, const CameraPose& pose) {
  return substitute_forward(params, replacement, z, pose, native_settings(params.config));
}

RenderOutput substitute_forward(const GeneratorParams& params,
                                std::span<const torch::Tensor> replacement,
                                const torch::Tensor& z, const CameraPose& pose,
                                const RenderSettings& settings) {
  require(replacement.size() == params.specs.size(),
          "substitute_forward: expected " + std::to_string(params.specs.size()) +
              " layer tensors, got " + std::to_string(replacement.size()));
  for (size_t j = 0; j < replacement.size(); ++j) {
    require(replacement[j].defined() && replacement[j].sizes().vec() == params.specs[j].shape,
            "substitute_forward: layer " + params.specs[j].name + " expects shape " +
                shape_string(params.specs[j].shape));
  }
  RenderSettings s = settings;
  s.need_appearance = true;
  auto w = map_latent(params, z);
  auto vr = render_field(params, replacement, w, pose, s);
  RenderOutput out;
  out.feature_map = vr.feature_map;
  out.depth = vr.depth;
  out.foreground = vr.foreground;
  out.image = upsample(params, vr.feature_map);
  out.pose = pose;
  return out;
}

}  // namespace hyperedit
