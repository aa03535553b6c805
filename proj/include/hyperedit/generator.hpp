#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperedit/volume_render.hpp"

namespace hyperedit {

enum class Group { Coarse, Medium, Fine };

std::string to_string(Group g);
Group group_from_string(const std::string& s);

/// One editable ("main linear") layer of the field network.
struct LayerSpec {
  int index = 0;  // 1-based
  std::string name;
  Group group = Group::Coarse;
  std::vector<int64_t> shape;

  bool operator==(const LayerSpec&) const = default;
};

/// Dimensions of the toy generator.
///
/// The field network has six trunk layers (geometry and appearance) followed by
/// three appearance layers that also see the view direction: two FiLM-modulated sine
/// layers and the linear projection to point features (color first). Only the weight
/// matrices of these nine layers are editable.
struct GeneratorConfig {
  int latent_dim = 64;
  int width = 64;
  int feature_dim = 32;  // channels 0..2 carry the point color
  int feature_res = 32;
  int upscale_stages = 2;  // each stage doubles the resolution
  int render_steps = 32;
  int mapping_layers = 3;
  int trunk_layers = 6;
  int appearance_layers = 3;
  double first_layer_frequency = 4.0;
  double base_sphere_radius = 0.55;
  double bound_radius = 1.0;
  std::array<int, 3> group_split{3, 3, 3};

  int editable_layers() const { return trunk_layers + appearance_layers; }
  int image_res() const { return feature_res << upscale_stages; }
  int upscale_factor() const { return 1 << upscale_stages; }
  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Layer specs implied by a config, indices 1..N with a contiguous c/m/f split.
std::vector<LayerSpec> layer_specs(const GeneratorConfig& config);

struct LatentCode {
  torch::Tensor z;  // [latent_dim]
  torch::Tensor w;  // [latent_dim], produced by map_latent
};

/// theta: the editable layer weights, plus every other parameter as a frozen bundle.
struct GeneratorParams {
  GeneratorConfig config;
  std::vector<LayerSpec> specs;
  std::vector<torch::Tensor> layers;            // aligned with specs
  std::map<std::string, torch::Tensor> frozen;  // mapping, FiLM affines, biases, heads, upsampler

  torch::ScalarType dtype() const { return layers.front().scalar_type(); }
  const torch::Tensor& frozen_at(const std::string& name) const;

  /// Deep copy, optionally converted to another floating dtype.
  GeneratorParams clone(std::optional<torch::ScalarType> dtype = std::nullopt) const;

  /// All tensors, editable first, in a stable order.
  std::vector<std::pair<std::string, torch::Tensor>> named_tensors() const;

  void validate() const;
};

/// Seeded random initialization (untrained).
GeneratorParams init_generator(const GeneratorConfig& config, uint64_t seed,
                               torch::ScalarType dtype = torch::kFloat32);

struct FieldSample {
  double sdf = 0.0;
  std::array<double, 3> color{};
  std::vector<double> feature;
};

struct RenderOutput {
  torch::Tensor image;        // [H, W, 3] in [0, 1]
  torch::Tensor feature_map;  // [h, w, C]
  torch::Tensor depth;        // [h, w], kBackgroundDepth on background
  torch::Tensor foreground;   // [h, w] bool
  CameraPose pose;
};

/// Draws z ~ N(0, I) from a seeded generator.
torch::Tensor sample_z(const GeneratorConfig& config, uint64_t seed,
                       torch::ScalarType dtype = torch::kFloat32);

torch::Tensor map_latent(const GeneratorParams& params, const torch::Tensor& z);
LatentCode make_latent(const GeneratorParams& params, const torch::Tensor& z);

/// Batched field network over explicit editable weights. x, d: [P,3]; w: [latent_dim].
FieldBatch field_forward(const GeneratorParams& params, std::span<const torch::Tensor> layers,
                         const torch::Tensor& w, const torch::Tensor& x, const torch::Tensor& d,
                         bool need_appearance = true);

FieldSample sample_field(const GeneratorParams& params, const std::array<double, 3>& x,
                         const std::array<double, 3>& d, const torch::Tensor& w);

/// SDF-to-density scale, always positive.
torch::Tensor density_beta(const GeneratorParams& params);

/// Default render settings for the config's native feature resolution.
RenderSettings native_settings(const GeneratorConfig& config);

/// Volume-renders the field for latent w. Returns the feature map and depth.
VolumeRenderResult render_field(const GeneratorParams& params,
                                std::span<const torch::Tensor> layers, const torch::Tensor& w,
                                const CameraPose& pose, const RenderSettings& settings);

/// StyleGAN-like skip upsampler: [h, w, C] -> [h*f, w*f, 3] in [0, 1].
torch::Tensor upsample(const GeneratorParams& params, const torch::Tensor& feature_map);

RenderOutput generate(const GeneratorParams& params, const torch::Tensor& z,
                      const CameraPose& pose);
RenderOutput generate(const GeneratorParams& params, const torch::Tensor& z,
                      const CameraPose& pose, const RenderSettings& settings);

/// Forward pass with `replacement` standing in for the editable layers, so gradients
/// reach whatever produced the replacement tensors.
RenderOutput substitute_forward(const GeneratorParams& params,
                                std::span<const torch::Tensor> replacement,
                                const torch::Tensor& z, const CameraPose& pose);
RenderOutput substitute_forward(const GeneratorParams& params,
                                std::span<const torch::Tensor> replacement,
                                const torch::Tensor& z, const CameraPose& pose,
                                const RenderSettings& settings);

}  // namespace hyperedit
