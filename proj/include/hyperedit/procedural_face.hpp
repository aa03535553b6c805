#pragma once

#include <functional>

#include "hyperedit/generator.hpp"

namespace hyperedit {

/// Closed-form head used as the toy training distribution: an ellipsoid skull with
/// nose and ears blended in, plus hair/eye/lip coloring. Traits are a fixed function of z.
struct FaceTraits {
  double ax = 0.5, ay = 0.62, az = 0.5;
  double nose_radius = 0.1;
  double hairline = 0.2;
  std::array<double, 3> skin{0.85, 0.65, 0.55};
  std::array<double, 3> hair{0.3, 0.2, 0.1};
  std::array<double, 3> eyes{0.1, 0.1, 0.15};
  std::array<double, 3> lips{0.7, 0.3, 0.3};
};

inline constexpr std::array<double, 3> kProceduralBackground{0.92, 0.92, 0.95};

FaceTraits face_traits(const torch::Tensor& z);

/// Analytic field; feature is the 3-channel color.
FieldBatch procedural_field(const FaceTraits& traits, const torch::Tensor& x,
                            bool need_appearance);

/// Ground-truth image of the procedural head at `res` x `res`.
torch::Tensor procedural_image(const FaceTraits& traits, const CameraPose& pose, int res,
                               int steps = 48, double beta = 0.01);

struct PretrainConfig {
  int iterations = 1500;
  int batch = 2;
  double lr = 2e-3;
  int sdf_points = 2048;
  int color_points = 1024;
  int feature_res = 16;
  int render_steps = 24;
  double max_yaw = 0.5;
  double max_pitch = 0.15;
  uint64_t seed = 0;
};

struct PretrainLog {
  int iteration = 0;
  double sdf = 0, color = 0, image = 0;
};

/// Distills the procedural head family into a freshly initialized generator
/// (every parameter trains here; the result is the frozen base for editing).
GeneratorParams pretrain_toy_generator(const GeneratorConfig& config, const PretrainConfig& pc,
                                       const std::function<void(const PretrainLog&)>& on_log = {});

}  // namespace hyperedit
