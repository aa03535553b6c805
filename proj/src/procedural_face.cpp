#include "hyperedit/procedural_face.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <numbers>

namespace hyperedit {

namespace {

double squash(double v) { return std::tanh(v); }
double unit(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::array<double, 3> mix(const std::array<double, 3>& a, const std::array<double, 3>& b,
                          double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

torch::Tensor smooth_min(const torch::Tensor& a, const torch::Tensor& b, double k) {
  auto h = torch::clamp_min(k - (a - b).abs(), 0.0) / k;
  return torch::minimum(a, b) - h * h * (k / 4.0);
}

torch::Tensor sphere_sdf(const torch::Tensor& x, std::array<double, 3> c, double r) {
  auto center = torch::tensor({c[0], c[1], c[2]}, x.options());
  return (x - center).norm(2, -1) - r;
}

torch::Tensor rgb(const std::array<double, 3>& c, const torch::Tensor& like) {
  return torch::tensor({c[0], c[1], c[2]}, like.options()).expand({like.size(0), 3});
}

}  // namespace

FaceTraits face_traits(const torch::Tensor& z) {
  require(z.dim() == 1 && z.size(0) >= 10, "face_traits needs a latent of dimension >= 10");
  auto zz = z.to(torch::kFloat64).contiguous();
  const double* v = zz.data_ptr<double>();
  FaceTraits t;
  t.ax = 0.47 + 0.05 * squash(v[0]);
  t.ay = 0.60 + 0.05 * squash(v[1]);
  t.az = 0.50 + 0.04 * squash(v[2]);
  t.nose_radius = 0.10 + 0.03 * squash(v[3]);
  t.hairline = 0.22 + 0.10 * squash(v[4]);
  t.skin = mix({0.96, 0.80, 0.70}, {0.50, 0.34, 0.25}, unit(v[5]));
  t.hair = mix({0.12, 0.08, 0.05}, {0.90, 0.75, 0.40}, unit(v[6]));
  t.eyes = mix({0.10, 0.10, 0.12}, {0.20, 0.35, 0.60}, unit(v[7]));
  t.lips = mix({0.75, 0.35, 0.35}, {0.55, 0.20, 0.25}, unit(v[8]));
  // v[9] tilts the hair color toward red.
  t.hair[0] = std::min(1.0, t.hair[0] + 0.2 * unit(v[9]));
  return t;
}

FieldBatch procedural_field(const FaceTraits& t, const torch::Tensor& x, bool need_appearance) {
  using torch::indexing::Slice;
  auto opts = x.options();
  auto radii = torch::tensor({t.ax, t.ay, t.az}, opts);
  // Ellipsoid distance bound.
  auto k0 = (x / radii).norm(2, -1);
  auto k1 = (x / (radii * radii)).norm(2, -1);
  auto head = k0 * (k0 - 1.0) / torch::clamp_min(k1, 1e-9);
  auto nose = sphere_sdf(x, {0.0, -0.03, t.az - 0.03}, t.nose_radius);
  auto ear_l = sphere_sdf(x, {t.ax - 0.03, 0.0, -0.02}, 0.09);
  auto ear_r = sphere_sdf(x, {-(t.ax - 0.03), 0.0, -0.02}, 0.09);

  FieldBatch out;
  out.sdf = smooth_min(smooth_min(head, nose, 0.06), torch::minimum(ear_l, ear_r), 0.04);
  if (!need_appearance) return out;

  auto px = x.index({Slice(), 0});
  auto py = x.index({Slice(), 1});
  auto zn = x.index({Slice(), 2}) / t.az;
  auto front = torch::clamp_min(zn, 0.0);
  auto back = torch::clamp_min(-zn, 0.0);
  auto hair_mask = py > (t.hairline + 0.35 * front * front - 0.45 * back);
  auto facing = zn > 0.55;
  auto eye_l = ((px - 0.16).square() + (py - 0.08).square()) < 0.055 * 0.055;
  auto eye_r = ((px + 0.16).square() + (py - 0.08).square()) < 0.055 * 0.055;
  auto eye_mask = torch::logical_and(facing, torch::logical_or(eye_l, eye_r));
  auto lip_mask = torch::logical_and(
      facing, torch::logical_and(px.abs() < 0.13, (py + 0.26).abs() < 0.035));

  auto color = rgb(t.skin, x);
  color = torch::where(hair_mask.unsqueeze(1), rgb(t.hair, x), color);
  color = torch::where(eye_mask.unsqueeze(1), rgb(t.eyes, x), color);
  color = torch::where(lip_mask.unsqueeze(1), rgb(t.lips, x), color);
  out.color = color;
  out.feature = color;
  return out;
}

torch::Tensor procedural_image(const FaceTraits& traits, const CameraPose& pose, int res,
                               int steps, double beta) {
  torch::NoGradGuard no_grad;
  RenderSettings s;
  s.height = s.width = res;
  s.steps = steps;
  FieldFn field = [&](const torch::Tensor& x, const torch::Tensor&, bool appearance) {
    return procedural_field(traits, x, appearance);
  };
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto bg = torch::tensor({kProceduralBackground[0], kProceduralBackground[1],
                           kProceduralBackground[2]},
                          opts);
  auto vr = volume_render(field, pose, s, torch::full({}, beta, opts), bg);
  return vr.feature_map.clamp(0.0, 1.0);
}

GeneratorParams pretrain_toy_generator(const GeneratorConfig& config, const PretrainConfig& pc,
                                       const std::function<void(const PretrainLog&)>& on_log) {
  require(pc.iterations >= 0 && pc.batch >= 1, "bad pretrain schedule");
  GeneratorParams params = init_generator(config, pc.seed, torch::kFloat32);
  std::vector<torch::Tensor> trainable;
  for (auto& t : params.layers) trainable.push_back(t.requires_grad_(true));
  for (auto& [k, t] : params.frozen) trainable.push_back(t.requires_grad_(true));

  torch::optim::Adam optim(trainable, torch::optim::AdamOptions(pc.lr));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(pc.seed + 1000003);
  auto f32 = torch::TensorOptions().dtype(torch::kFloat32);
  const double bound = config.bound_radius;
  const int image_res = pc.feature_res << config.upscale_stages;

  auto random_dirs = [&](int64_t n) {
    auto d = torch::randn({n, 3}, gen, f32);
    return d / d.norm(2, -1, true);
  };
  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * torch::rand({1}, gen, torch::kFloat64).item<double>();
  };

  for (int it = 0; it < pc.iterations; ++it) {
    // Cosine decay to 10% of the base rate.
    const double progress = pc.iterations > 1 ? double(it) / (pc.iterations - 1) : 0.0;
    const double lr = pc.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    for (auto& group : optim.param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }

    optim.zero_grad();
    torch::Tensor sdf_loss = torch::zeros({}, f32);
    torch::Tensor color_loss = torch::zeros({}, f32);
    torch::Tensor image_loss = torch::zeros({}, f32);
    for (int b = 0; b < pc.batch; ++b) {
      auto z = torch::randn({config.latent_dim}, gen, f32);
      const FaceTraits traits = face_traits(z);
      auto w = map_latent(params, z);

      torch::Tensor surface;
      {
        torch::NoGradGuard no_grad;
        // The head is star-shaped around the origin: bisect along random directions.
        const int64_t n = pc.sdf_points / 2 + pc.color_points;
        auto dirs = random_dirs(n);
        auto lo = torch::zeros({n, 1}, f32);
        auto hi = torch::full({n, 1}, bound, f32);
        for (int k = 0; k < 24; ++k) {
          auto mid = 0.5 * (lo + hi);
          auto inside = procedural_field(traits, dirs * mid, false).sdf.unsqueeze(1) < 0;
          lo = torch::where(inside, mid, lo);
          hi = torch::where(inside, hi, mid);
        }
        surface = dirs * (0.5 * (lo + hi));
      }
      using torch::indexing::Slice;
      const int64_t n_near = pc.sdf_points / 2;
      auto near_pts = surface.index({Slice(0, n_near)}) + 0.03 * torch::randn({n_near, 3}, gen, f32);
      auto ball = random_dirs(pc.sdf_points - n_near) *
                  torch::pow(torch::rand({pc.sdf_points - n_near, 1}, gen, f32), 1.0 / 3.0) * bound;
      auto pts = torch::cat({near_pts, ball}, 0);
      torch::Tensor target_sdf;
      {
        torch::NoGradGuard no_grad;
        target_sdf = procedural_field(traits, pts, false).sdf;
      }
      auto pred = field_forward(params, params.layers, w, pts, torch::zeros_like(pts), false);
      sdf_loss = sdf_loss + (pred.sdf - target_sdf).abs().mean();

      auto color_pts = surface.index({Slice(n_near, torch::indexing::None)}) +
                       0.01 * torch::randn({pc.color_points, 3}, gen, f32);
      torch::Tensor target_color;
      {
        torch::NoGradGuard no_grad;
        target_color = procedural_field(traits, color_pts, true).color;
      }
      auto pc_pred = field_forward(params, params.layers, w, color_pts,
                                   random_dirs(pc.color_points), true);
      color_loss = color_loss + (pc_pred.color - target_color).abs().mean();

      CameraPose pose;
      pose.yaw = uniform(-pc.max_yaw, pc.max_yaw);
      pose.pitch = uniform(-pc.max_pitch, pc.max_pitch);
      auto target = procedural_image(traits, pose, image_res).to(torch::kFloat32);
      RenderSettings rs;
      rs.height = rs.width = pc.feature_res;
      rs.steps = pc.render_steps;
      rs.bound_radius = bound;
      auto out = generate(params, z, pose, rs);
      auto low_target = torch::nn::functional::avg_pool2d(
                            target.permute({2, 0, 1}).unsqueeze(0),
                            torch::nn::functional::AvgPool2dFuncOptions(config.upscale_factor()))
                            .squeeze(0)
                            .permute({1, 2, 0});
      using torch::indexing::Slice;
      auto low_rgb = out.feature_map.index({Slice(), Slice(), Slice(0, 3)});
      image_loss = image_loss + (out.image - target).abs().mean() +
                   0.5 * (low_rgb - low_target).abs().mean();
    }
    auto total = (sdf_loss + color_loss + image_loss) / pc.batch;
    total.backward();
    optim.step();

    if (on_log && (it % 50 == 0 || it + 1 == pc.iterations)) {
      on_log({it, sdf_loss.item<double>() / pc.batch, color_loss.item<double>() / pc.batch,
              image_loss.item<double>() / pc.batch});
    }
  }

  return params.clone();
}

}  // namespace hyperedit
