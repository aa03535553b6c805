#include "hyperedit/evaluation.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>

namespace hyperedit {

namespace {

uint64_t identity_seed(uint64_t seed, int index, uint64_t salt) {
  uint64_t x = (seed + 1) * 0x9E3779B97F4A7C15ull ^ (uint64_t(index) + salt * 0x100000001B3ull);
  x ^= x >> 33;
  x *= 0xFF51AFD7ED558CCDull;
  return x ^ (x >> 33);
}

// NN distance of every point of `from` into `to`.
std::vector<double> nn_distances(const std::vector<Point3>& from, const KdTree& to) {
  std::vector<double> out(from.size());
  for (size_t i = 0; i < from.size(); ++i) out[i] = to.nearest(from[i]).distance;
  return out;
}

double masked_mean(const std::vector<double>& d, double r, size_t& used) {
  double sum = 0.0;
  used = 0;
  for (double v : d) {
    if (v <= r) {
      sum += v;
      ++used;
    }
  }
  return used ? sum / double(used) : 0.0;
}

Json score_json(const IdentityScore& s, bool with_excluded) {
  Json j;
  j["index"] = s.index;
  j["value"] = s.skipped ? Json(nullptr) : Json(s.value);
  j["skipped"] = s.skipped;
  if (s.skipped) j["reason"] = s.reason;
  if (with_excluded) j["excluded_fraction"] = s.excluded_fraction;
  j["yaws"] = s.yaws;
  return j;
}

IdentityScore score_from_json(const Json& j) {
  IdentityScore s;
  s.index = j.at("index").get<int>();
  s.skipped = j.at("skipped").get<bool>();
  if (!s.skipped) s.value = j.at("value").get<double>();
  if (j.contains("reason")) s.reason = j.at("reason").get<std::string>();
  if (j.contains("excluded_fraction")) s.excluded_fraction = j.at("excluded_fraction").get<double>();
  s.yaws = j.at("yaws").get<std::vector<double>>();
  return s;
}

}  // namespace

DepthPointCloud backproject(const torch::Tensor& depth, const CameraPose& pose) {
  require(depth.defined() && depth.dim() == 2, "backproject: depth must be [h, w]");
  pose.validate();
  const int h = static_cast<int>(depth.size(0));
  const int w = static_cast<int>(depth.size(1));
  auto rays = camera_rays(pose, h, w, torch::kFloat64);
  auto d = depth.detach().to(torch::kFloat64).reshape({-1});
  auto mask = torch::logical_and(d > 0.0, d != kBackgroundDepth);
  mask = torch::logical_and(mask, torch::isfinite(d));
  auto pts = (rays.origins + d.unsqueeze(1) * rays.directions).index({mask}).contiguous();

  DepthPointCloud cloud;
  cloud.mask = mask.reshape({h, w});
  const double* p = pts.data_ptr<double>();
  cloud.points.resize(pts.size(0));
  for (int64_t i = 0; i < pts.size(0); ++i) {
    cloud.points[i] = {p[3 * i], p[3 * i + 1], p[3 * i + 2]};
  }
  return cloud;
}

double median_spacing(const std::vector<Point3>& points) {
  if (points.size() < 2) return 0.0;
  KdTree tree(points);
  std::vector<double> d(points.size());
  for (size_t i = 0; i < points.size(); ++i) d[i] = tree.nearest(points[i], int64_t(i)).distance;
  const size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + mid, d.end());
  return d[mid];
}

ChamferResult modified_chamfer(const std::vector<Point3>& a, const std::vector<Point3>& b,
                               std::optional<double> r_vis) {
  ChamferResult r;
  if (a.empty() || b.empty()) {
    r.error = "empty point cloud";
    return r;
  }
  r.r_vis = r_vis ? *r_vis : 4.0 * std::max(median_spacing(a), median_spacing(b));
  require(std::isfinite(r.r_vis) && r.r_vis >= 0.0, "modified_chamfer: r_vis must be >= 0");
  KdTree ta(a), tb(b);
  size_t used_a = 0, used_b = 0;
  const double ma = masked_mean(nn_distances(a, tb), r.r_vis, used_a);
  const double mb = masked_mean(nn_distances(b, ta), r.r_vis, used_b);
  r.excluded_fraction = 1.0 - double(used_a + used_b) / double(a.size() + b.size());
  if (used_a == 0 || used_b == 0) {
    r.error = "no mutually visible points";
    return r;
  }
  r.value = 0.5 * (ma + mb);
  r.ok = true;
  return r;
}

void EvalConfig::validate() const {
  require(n_identities >= 1, "n_identities must be >= 1");
  require(depth_res >= 2, "depth_res must be >= 2");
  require(id_res >= 0 && render_steps >= 0, "id_res and render_steps must be >= 0");
  require(side_yaw_min >= 0.0 && side_yaw_max >= side_yaw_min && side_yaw_max <= M_PI,
          "side yaw range must satisfy 0 <= min <= max <= pi");
  require(rvis_factor > 0.0, "rvis_factor must be > 0");
}

Json EvalConfig::to_json() const {
  Json j;
  j["n_identities"] = n_identities;
  j["seed"] = seed;
  j["depth_res"] = depth_res;
  j["id_res"] = id_res;
  j["render_steps"] = render_steps;
  j["side_yaw_min"] = side_yaw_min;
  j["side_yaw_max"] = side_yaw_max;
  j["rvis_factor"] = rvis_factor;
  j["side_yaw_override"] = side_yaw_override ? Json(*side_yaw_override) : Json(nullptr);
  j["id_against_base"] = id_against_base;
  return j;
}

torch::Tensor identity_latent(const GeneratorParams& params, uint64_t seed, int index) {
  return sample_z(params.config, identity_seed(seed, index, 1), params.dtype());
}

double side_yaw(uint64_t seed, int index, int draw, const EvalConfig& config) {
  if (config.side_yaw_override) return *config.side_yaw_override;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(identity_seed(seed, index, 2 + draw));
  auto u = torch::rand({2}, gen, torch::kFloat64);
  const double magnitude =
      config.side_yaw_min + (config.side_yaw_max - config.side_yaw_min) * u[0].item<double>();
  return u[1].item<double>() < 0.5 ? -magnitude : magnitude;
}

std::vector<IdentityScore> depth_consistency(const GeneratorParams& params,
                                             const EvalConfig& config) {
  config.validate();
  torch::NoGradGuard no_grad;
  RenderSettings rs = native_settings(params.config);
  rs.height = rs.width = config.depth_res;
  if (config.render_steps > 0) rs.steps = config.render_steps;
  rs.need_appearance = false;

  std::vector<IdentityScore> out;
  for (int i = 0; i < config.n_identities; ++i) {
    IdentityScore s;
    s.index = i;
    const CameraPose frontal;
    CameraPose side;
    side.yaw = side_yaw(config.seed, i, 0, config);
    s.yaws = {frontal.yaw, side.yaw};
    try {
      auto w = map_latent(params, identity_latent(params, config.seed, i));
      auto a = backproject(render_field(params, params.layers, w, frontal, rs).depth, frontal);
      auto b = backproject(render_field(params, params.layers, w, side, rs).depth, side);
      if (a.empty() || b.empty()) {
        s.skipped = true;
        s.reason = "empty foreground";
      } else {
        auto c = modified_chamfer(a.points, b.points,
                                  config.rvis_factor * median_spacing(a.points));
        s.excluded_fraction = c.excluded_fraction;
        if (!c.ok) {
          s.skipped = true;
          s.reason = c.error;
        } else {
          s.value = kReportDepthScale * c.value;
        }
      }
    } catch (const std::exception& e) {
      s.skipped = true;
      s.reason = e.what();
    }
    out.push_back(s);
  }
  return out;
}

std::vector<IdentityScore> id_consistency(const GeneratorParams& params,
                                          const IdentityEmbedder& identity,
                                          const EvalConfig& config,
                                          const GeneratorParams* base) {
  config.validate();
  require(!config.id_against_base || base != nullptr,
          "id_consistency: base generator required for the edited-vs-base mode");
  torch::NoGradGuard no_grad;
  RenderSettings rs = native_settings(params.config);
  if (config.id_res > 0) {
    const int f = params.config.upscale_factor();
    require(config.id_res % f == 0, "id_res must be a multiple of the upscale factor");
    rs.height = rs.width = config.id_res / f;
  }
  if (config.render_steps > 0) rs.steps = config.render_steps;

  std::vector<IdentityScore> out;
  for (int i = 0; i < config.n_identities; ++i) {
    IdentityScore s;
    s.index = i;
    try {
      auto z = identity_latent(params, config.seed, i);
      CameraPose p1, p2;
      p1.yaw = side_yaw(config.seed, i, 10, config);
      torch::Tensor img_a, img_b;
      if (config.id_against_base) {
        s.yaws = {p1.yaw};
        img_a = generate(params, z, p1, rs).image;
        img_b = generate(*base, z.to(base->dtype()), p1, rs).image.to(img_a.scalar_type());
      } else {
        p2.yaw = side_yaw(config.seed, i, 11, config);
        s.yaws = {p1.yaw, p2.yaw};
        img_a = generate(params, z, p1, rs).image;
        img_b = generate(params, z, p2, rs).image;
      }
      auto fa = identity.identity_embed(img_a).to(torch::kFloat64);
      auto fb = identity.identity_embed(img_b).to(torch::kFloat64);
      s.value = std::clamp(torch::dot(fa, fb).item<double>(), -1.0, 1.0);
    } catch (const std::exception& e) {
      s.skipped = true;
      s.reason = e.what();
    }
    out.push_back(s);
  }
  return out;
}

ConsistencyReport build_report(const std::vector<IdentityScore>& depth,
                               const std::vector<IdentityScore>& id, const Json& config) {
  require(!depth.empty() || !id.empty(), "build_report: no metric requested");
  ConsistencyReport r;
  r.depth = depth;
  r.id = id;
  r.config = config;
  r.n_identities = static_cast<int>(std::max(depth.size(), id.size()));
  auto mean_of = [](const std::vector<IdentityScore>& v, int& skipped, const char* name) {
    double sum = 0.0;
    int used = 0;
    skipped = 0;
    for (const auto& s : v) {
      if (s.skipped) {
        ++skipped;
      } else {
        sum += s.value;
        ++used;
      }
    }
    if (!v.empty() && used == 0) {
      throw std::runtime_error(std::string("build_report: every identity was skipped for ") +
                               name);
    }
    return used ? sum / used : 0.0;
  };
  r.depth_error_mean = mean_of(depth, r.depth_skipped, "depth error");
  r.id_similarity_mean = mean_of(id, r.id_skipped, "identity similarity");
  return r;
}

Json ConsistencyReport::to_json() const {
  Json j;
  j["kind"] = "consistency_report";
  j["version"] = 1;
  j["config"] = config;
  j["n_identities"] = n_identities;
  Json d;
  d["units"] = "scene_units_x100";
  d["mean"] = depth.empty() ? Json(nullptr) : Json(depth_error_mean);
  d["skipped"] = depth_skipped;
  d["per_identity"] = Json::array();
  for (const auto& s : depth) d["per_identity"].push_back(score_json(s, true));
  j["depth_error"] = d;
  Json i;
  i["mean"] = id.empty() ? Json(nullptr) : Json(id_similarity_mean);
  i["skipped"] = id_skipped;
  i["per_identity"] = Json::array();
  for (const auto& s : id) i["per_identity"].push_back(score_json(s, false));
  j["id_similarity"] = i;
  return j;
}

ConsistencyReport ConsistencyReport::from_json(const Json& j) {
  require(j.value("kind", "") == "consistency_report" && j.value("version", 0) == 1,
          "not a version-1 consistency report");
  ConsistencyReport r;
  r.config = j.at("config");
  r.n_identities = j.at("n_identities").get<int>();
  const auto& d = j.at("depth_error");
  for (const auto& s : d.at("per_identity")) r.depth.push_back(score_from_json(s));
  r.depth_skipped = d.at("skipped").get<int>();
  if (!d.at("mean").is_null()) r.depth_error_mean = d.at("mean").get<double>();
  const auto& i = j.at("id_similarity");
  for (const auto& s : i.at("per_identity")) r.id.push_back(score_from_json(s));
  r.id_skipped = i.at("skipped").get<int>();
  if (!i.at("mean").is_null()) r.id_similarity_mean = i.at("mean").get<double>();
  return r;
}

}  // namespace hyperedit
