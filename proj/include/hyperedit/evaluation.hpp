#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hyperedit/checkpoint.hpp"
#include "hyperedit/encoders.hpp"
#include "hyperedit/generator.hpp"
#include "hyperedit/kdtree.hpp"

namespace hyperedit {

/// Foreground pixels of a depth map lifted to world space.
struct DepthPointCloud {
  std::vector<Point3> points;
  torch::Tensor mask;  // [h, w] bool, true where a point was produced
  bool empty() const { return points.empty(); }
};

/// origin + depth * direction for every foreground pixel (depth > 0, not the sentinel).
DepthPointCloud backproject(const torch::Tensor& depth, const CameraPose& pose);

/// Median distance from each point to its nearest other point (0 for < 2 points).
double median_spacing(const std::vector<Point3>& points);

struct ChamferResult {
  double value = 0.0;              // scene units
  double excluded_fraction = 0.0;  // share of points without a neighbor within r_vis
  double r_vis = 0.0;
  bool ok = false;                 // false when a cloud is empty or nothing is mutually visible
  std::string error;
};

/// Symmetric mean nearest-neighbor distance over mutually visible points:
/// 0.5 * (mean_{a: d(a,B) <= r} d(a,B) + mean_{b: d(b,A) <= r} d(b,A)).
/// r_vis defaults to 4x the larger median spacing of the two clouds.
ChamferResult modified_chamfer(const std::vector<Point3>& a, const std::vector<Point3>& b,
                               std::optional<double> r_vis = std::nullopt);

struct EvalConfig {
  int n_identities = 20;
  uint64_t seed = 0;
  int depth_res = 128;
  int id_res = 0;          // 0: the generator's native image resolution
  int render_steps = 0;    // 0: the generator's native step count
  double side_yaw_min = 0.2;
  double side_yaw_max = 0.5;
  double rvis_factor = 4.0;
  std::optional<double> side_yaw_override;  // replaces the random side yaw (identity checks)
  bool id_against_base = false;  // compare edited vs base at one pose instead of two views

  void validate() const;
  Json to_json() const;
};

struct IdentityScore {
  int index = 0;
  double value = 0.0;
  bool skipped = false;
  std::string reason;
  double excluded_fraction = 0.0;  // depth only
  std::vector<double> yaws;
};

/// Latent and random side yaw of identity i, fixed by (seed, i).
torch::Tensor identity_latent(const GeneratorParams& params, uint64_t seed, int index);
double side_yaw(uint64_t seed, int index, int draw, const EvalConfig& config);

/// Per identity: frontal vs side depth, back-projected into one world frame, chamfer x100.
std::vector<IdentityScore> depth_consistency(const GeneratorParams& params,
                                             const EvalConfig& config);

/// Per identity identity-embedding cosine between two side views, or between `params`
/// and `base` at one side view when config.id_against_base is set.
std::vector<IdentityScore> id_consistency(const GeneratorParams& params,
                                          const IdentityEmbedder& identity,
                                          const EvalConfig& config,
                                          const GeneratorParams* base = nullptr);

struct ConsistencyReport {
  std::vector<IdentityScore> depth;
  std::vector<IdentityScore> id;
  double depth_error_mean = 0.0;
  double id_similarity_mean = 0.0;
  int depth_skipped = 0;
  int id_skipped = 0;
  int n_identities = 0;
  Json config;

  Json to_json() const;
  static ConsistencyReport from_json(const Json& j);
};

/// Aggregates per-identity lists. Throws when a requested metric has no usable identity.
ConsistencyReport build_report(const std::vector<IdentityScore>& depth,
                               const std::vector<IdentityScore>& id, const Json& config);

/// Chamfer values are multiplied by this in reports.
inline constexpr double kReportDepthScale = 100.0;

}  // namespace hyperedit
