#include "hyperedit/camera.hpp"

#include <cmath>
#include <numbers>

namespace hyperedit {

void CameraPose::validate() const {
  require(std::isfinite(yaw) && std::isfinite(pitch) && std::isfinite(radius) &&
              std::isfinite(fov),
          "camera pose has non-finite fields");
  require(yaw >= -std::numbers::pi && yaw <= std::numbers::pi,
          "camera yaw must lie in [-pi, pi]");
  require(pitch >= -std::numbers::pi / 2 && pitch <= std::numbers::pi / 2,
          "camera pitch must lie in [-pi/2, pi/2]");
  require(radius > 0.0, "camera radius must be positive");
  require(fov > 0.0 && fov < std::numbers::pi, "camera fov must lie in (0, pi)");
}

std::array<double, 3> camera_position(const CameraPose& pose) {
  const double cp = std::cos(pose.pitch);
  return {pose.radius * std::sin(pose.yaw) * cp, pose.radius * std::sin(pose.pitch),
          pose.radius * std::cos(pose.yaw) * cp};
}

Rays camera_rays(const CameraPose& pose, int height, int width, torch::ScalarType dtype) {
  pose.validate();
  require(height > 0 && width > 0, "ray grid must be non-empty");

  const auto eye = camera_position(pose);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto origin = torch::tensor({eye[0], eye[1], eye[2]}, opts);
  auto forward = -origin / origin.norm();
  auto world_up = torch::tensor({0.0, 1.0, 0.0}, opts);
  auto right = torch::linalg_cross(forward, world_up);
  // Looking straight up or down: any horizontal right vector will do.
  if (right.norm().item<double>() < 1e-9) right = torch::tensor({1.0, 0.0, 0.0}, opts);
  right = right / right.norm();
  auto up = torch::linalg_cross(right, forward);

  const double half = std::tan(pose.fov / 2.0);
  const double aspect = static_cast<double>(width) / height;
  auto cols = (torch::arange(width, opts) + 0.5) / width * 2.0 - 1.0;
  auto rows = 1.0 - (torch::arange(height, opts) + 0.5) / height * 2.0;
  auto grid = torch::meshgrid({rows, cols}, "ij");
  auto y = grid[0].reshape({-1, 1}) * half;
  auto x = grid[1].reshape({-1, 1}) * half * aspect;

  auto dirs = forward.unsqueeze(0) + x * right.unsqueeze(0) + y * up.unsqueeze(0);
  dirs = dirs / dirs.norm(2, -1, true);

  Rays rays;
  rays.directions = dirs.to(dtype);
  rays.origins = origin.unsqueeze(0).expand({height * width, 3}).to(dtype);
  rays.height = height;
  rays.width = width;
  return rays;
}

std::vector<CameraPose> yaw_sweep(const std::vector<double>& yaws, const CameraPose& base) {
  std::vector<CameraPose> poses;
  poses.reserve(yaws.size());
  for (double yaw : yaws) {
    CameraPose p = base;
    p.yaw = yaw;
    p.validate();
    poses.push_back(p);
  }
  return poses;
}

}  // namespace hyperedit
