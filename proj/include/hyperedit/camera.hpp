#pragma once

#include <array>
#include <vector>

#include "hyperedit/common.hpp"

namespace hyperedit {

/// Orbit camera looking at the origin. yaw = pitch = 0 sits on +z facing -z.
struct CameraPose {
  double yaw = 0.0;
  double pitch = 0.0;
  double radius = 2.7;
  double fov = 0.6;  // full vertical field of view, radians

  void validate() const;
  bool operator==(const CameraPose&) const = default;
};

/// Per-pixel rays in row-major order (row 0 is the top of the image).
struct Rays {
  torch::Tensor origins;     // [H*W, 3]
  torch::Tensor directions;  // [H*W, 3], unit length
  int height = 0;
  int width = 0;
};

Rays camera_rays(const CameraPose& pose, int height, int width,
                 torch::ScalarType dtype = torch::kFloat32);

/// World-space camera centre for a pose.
std::array<double, 3> camera_position(const CameraPose& pose);

/// Poses at the given yaws sharing pitch/radius/fov with `base`.
std::vector<CameraPose> yaw_sweep(const std::vector<double>& yaws,
                                  const CameraPose& base = {});

}  // namespace hyperedit
