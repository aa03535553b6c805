#include "hyperedit/volume_render.hpp"

namespace hyperedit {

torch::Tensor mean_sigmoid(const torch::Tensor& a, const torch::Tensor& b) {
  // (softplus(hi) - softplus(lo)) / d with d = hi - lo >= 0, written as
  // log1p(sigmoid(lo) * expm1(d)) / d so that close endpoints do not cancel.
  // Past d = 30 the plain difference is exact enough and expm1 would overflow.
  auto hi = torch::maximum(a, b);
  auto lo = torch::minimum(a, b);
  auto d = hi - lo;
  auto tiny = d < 1e-12;
  auto wide = d > 30.0;
  auto safe = torch::where(tiny, torch::ones_like(d), d);
  auto near = torch::log1p(torch::sigmoid(lo) * torch::expm1(torch::clamp_max(safe, 30.0))) / safe;
  auto far = (torch::relu(hi) - torch::relu(lo) + torch::log1p(torch::exp(-hi.abs())) -
              torch::log1p(torch::exp(-lo.abs()))) /
             safe;
  return torch::where(tiny, torch::sigmoid(0.5 * (a + b)), torch::where(wide, far, near));
}

VolumeRenderResult volume_render(const FieldFn& field, const CameraPose& pose,
                                 const RenderSettings& settings, const torch::Tensor& beta,
                                 const torch::Tensor& background_feature) {
  pose.validate();
  require(settings.steps >= 2, "volume_render needs at least 2 samples per ray");
  require(settings.height > 0 && settings.width > 0, "render resolution must be positive");
  require(settings.bound_radius > 0.0, "bound radius must be positive");
  require(beta.defined() && beta.numel() == 1, "beta must be a scalar tensor");

  const auto dtype = beta.scalar_type();
  const auto rays = camera_rays(pose, settings.height, settings.width, dtype);
  const int64_t n_rays = static_cast<int64_t>(settings.height) * settings.width;
  const int64_t n_samples = settings.steps;
  auto opts = torch::TensorOptions().dtype(dtype);

  // Segment of each ray inside the bounding sphere.
  auto b = (rays.origins * rays.directions).sum(-1);
  auto c = (rays.origins * rays.origins).sum(-1) - settings.bound_radius * settings.bound_radius;
  auto disc = b * b - c;
  auto hit_index = torch::nonzero(disc > 0).squeeze(1);
  const int64_t n_hit = hit_index.size(0);

  VolumeRenderResult out;
  auto acc_full = torch::zeros({n_rays}, opts);
  auto depth_full = torch::full({n_rays}, kBackgroundDepth, opts);
  auto weights_full = torch::zeros({n_rays, n_samples - 1}, opts);
  torch::Tensor feature_full;

  if (n_hit > 0) {
    auto o = rays.origins.index_select(0, hit_index);
    auto d = rays.directions.index_select(0, hit_index);
    auto bh = b.index_select(0, hit_index);
    auto sq = torch::sqrt(disc.index_select(0, hit_index));
    auto near = torch::clamp_min(-bh - sq, 0.0);
    auto far = torch::clamp_min(-bh + sq, 0.0);

    auto u = torch::linspace(0.0, 1.0, n_samples, opts);
    auto t = near.unsqueeze(1) + (far - near).unsqueeze(1) * u.unsqueeze(0);  // [Rh, S]
    auto points = (o.unsqueeze(1) + t.unsqueeze(2) * d.unsqueeze(1)).reshape({-1, 3});
    auto dirs = d.unsqueeze(1).expand({n_hit, n_samples, 3}).reshape({-1, 3});

    FieldBatch f = field(points, dirs, settings.need_appearance);
    require(f.sdf.defined() && f.sdf.numel() == n_hit * n_samples,
            "field returned an sdf of unexpected size");
    auto s = f.sdf.reshape({n_hit, n_samples});

    using torch::indexing::Slice;
    auto s0 = s.index({Slice(), Slice(0, -1)});
    auto s1 = s.index({Slice(), Slice(1, torch::indexing::None)});
    auto t0 = t.index({Slice(), Slice(0, -1)});
    auto t1 = t.index({Slice(), Slice(1, torch::indexing::None)});
    auto delta = t1 - t0;

    auto tau = delta / beta * mean_sigmoid(-s0 / beta, -s1 / beta);
    auto optical = torch::cumsum(tau, 1);
    auto transmittance = torch::exp(-(optical - tau));
    auto weights = transmittance * -torch::expm1(-tau);
    auto acc = weights.sum(1);

    auto crossing = torch::logical_and(s0 > 0, s1 <= 0);
    auto denom = torch::where(crossing, s0 - s1, torch::ones_like(s0));
    auto location = torch::where(crossing, t0 + delta * (s0 / denom), 0.5 * (t0 + t1));
    auto depth = (weights * location).sum(1) / torch::clamp_min(acc, 1e-12);
    depth = torch::where(acc >= kForegroundThreshold, depth,
                         torch::full_like(depth, kBackgroundDepth));

    acc_full = acc_full.index_copy(0, hit_index, acc);
    depth_full = depth_full.index_copy(0, hit_index, depth);
    weights_full = weights_full.index_copy(0, hit_index, weights);

    if (settings.need_appearance) {
      require(f.feature.defined(), "field returned no feature for an appearance render");
      const int64_t channels = f.feature.size(-1);
      auto feat = f.feature.reshape({n_hit, n_samples, channels});
      auto mid = 0.5 * (feat.index({Slice(), Slice(0, -1)}) +
                        feat.index({Slice(), Slice(1, torch::indexing::None)}));
      auto composite = (weights.unsqueeze(2) * mid).sum(1);
      torch::Tensor bg = background_feature.defined()
                             ? background_feature.to(dtype).reshape({1, channels})
                             : torch::zeros({1, channels}, opts);
      composite = composite + (1.0 - acc).unsqueeze(1) * bg;
      feature_full = bg.expand({n_rays, channels}).clone().index_copy(0, hit_index, composite);
    }
  } else if (settings.need_appearance && background_feature.defined()) {
    feature_full = background_feature.to(dtype).reshape({1, -1}).expand({n_rays, -1}).clone();
  }

  const auto h = settings.height;
  const auto w = settings.width;
  out.accumulation = acc_full.reshape({h, w});
  out.depth = depth_full.reshape({h, w});
  out.foreground = out.accumulation >= kForegroundThreshold;
  out.weights = weights_full;
  if (feature_full.defined()) out.feature_map = feature_full.reshape({h, w, -1});
  return out;
}

}  // namespace hyperedit
