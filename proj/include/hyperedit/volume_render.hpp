#pragma once

#include <functional>

#include "hyperedit/camera.hpp"

namespace hyperedit {

/// Depth written to pixels whose accumulated opacity stays below the foreground threshold.
inline constexpr double kBackgroundDepth = -1.0;
inline constexpr double kForegroundThreshold = 0.5;

/// Batched field evaluation: sdf [P], color [P,3], feature [P,C].
/// color and feature may be left undefined when appearance was not requested.
struct FieldBatch {
  torch::Tensor sdf;
  torch::Tensor color;
  torch::Tensor feature;
};

/// points [P,3], unit view directions [P,3], whether color/feature are needed.
using FieldFn = std::function<FieldBatch(const torch::Tensor& points,
                                         const torch::Tensor& directions,
                                         bool need_appearance)>;

struct RenderSettings {
  int height = 32;
  int width = 32;
  int steps = 32;               // samples per ray, >= 2 (steps - 1 intervals)
  double bound_radius = 1.0;    // scene content lives inside this sphere
  bool need_appearance = true;  // false renders depth only
};

struct VolumeRenderResult {
  torch::Tensor feature_map;   // [h, w, C]; undefined for depth-only renders
  torch::Tensor depth;         // [h, w]; kBackgroundDepth on background
  torch::Tensor accumulation;  // [h, w] in [0, 1]
  torch::Tensor foreground;    // [h, w] bool
  torch::Tensor weights;       // [h*w, steps - 1] per-interval termination probability
};

/// Renders an SDF field with density sigma(s) = sigmoid(-s / beta) / beta.
///
/// The SDF is treated as piecewise linear between consecutive samples, so each
/// interval's optical depth is integrated in closed form. Depth is the expected
/// termination distance; an interval that crosses the zero level set terminates
/// at the interpolated crossing, every other interval at its midpoint.
/// `background_feature` ([C], optional) fills the transmittance left at the far end.
VolumeRenderResult volume_render(const FieldFn& field, const CameraPose& pose,
                                 const RenderSettings& settings, const torch::Tensor& beta,
                                 const torch::Tensor& background_feature = {});

/// Mean of sigmoid over the segment between a and b, evaluated without cancellation.
/// This is (softplus(a) - softplus(b)) / (a - b), and sigmoid(a) when a == b.
torch::Tensor mean_sigmoid(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace hyperedit
