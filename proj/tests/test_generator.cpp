#undef CHECK  // c10 logging defines its own
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "hyperedit/camera.hpp"
#include "hyperedit/checkpoint.hpp"
#include "hyperedit/generator.hpp"
#include "hyperedit/volume_render.hpp"
#include "test_support.hpp"

using namespace hyperedit;
using hyperedit::testing::bit_equal;
using hyperedit::testing::tiny_config;

namespace {

auto f64 = torch::TensorOptions().dtype(torch::kFloat64);

FieldFn sphere_field(double radius, int channels = 4) {
  return [radius, channels](const torch::Tensor& x, const torch::Tensor&, bool appearance) {
    FieldBatch b;
    b.sdf = x.norm(2, -1) - radius;
    if (appearance) {
      b.color = torch::full({x.size(0), 3}, 0.5, x.options());
      b.feature = torch::ones({x.size(0), channels}, x.options());
    }
    return b;
  };
}

// Closed-form ray/sphere entry distance, NaN on a miss.
torch::Tensor analytic_sphere_depth(const CameraPose& pose, int res, double radius) {
  auto rays = camera_rays(pose, res, res, torch::kFloat64);
  auto b = (rays.origins * rays.directions).sum(-1);
  auto c = (rays.origins * rays.origins).sum(-1) - radius * radius;
  auto disc = b * b - c;
  auto t = -b - torch::sqrt(torch::clamp_min(disc, 0.0));
  return torch::where(disc > 0, t, torch::full_like(t, NAN)).reshape({res, res});
}

double sphere_depth_error(int steps, double beta = 1e-3) {
  const double radius = 0.5;
  CameraPose pose;
  pose.yaw = 0.3;
  RenderSettings s;
  s.height = s.width = 24;
  s.steps = steps;
  auto vr = volume_render(sphere_field(radius), pose, s, torch::full({}, beta, f64));
  auto truth = analytic_sphere_depth(pose, 24, radius);
  auto both = torch::logical_and(vr.foreground, torch::isfinite(truth));
  REQUIRE(both.sum().item<int64_t>() > 50);
  return (vr.depth - truth).abs().index({both}).max().item<double>();
}

}  // namespace

TEST_CASE("camera rays point at the origin from the orbit") {
  CameraPose pose;
  auto rays = camera_rays(pose, 5, 5, torch::kFloat64);
  CHECK(rays.origins.size(0) == 25);
  auto center_dir = rays.directions[12];
  CHECK(center_dir[2].item<double>() == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(torch::allclose(rays.directions.norm(2, -1), torch::ones({25}, f64)));
  CameraPose bad;
  bad.radius = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = {};
  bad.pitch = 2.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("empty scene accumulates nothing and reports the background depth") {
  FieldFn empty = [](const torch::Tensor& x, const torch::Tensor&, bool appearance) {
    FieldBatch b;
    b.sdf = torch::full({x.size(0)}, 10.0, x.options());
    if (appearance) {
      b.color = torch::zeros({x.size(0), 3}, x.options());
      b.feature = torch::zeros({x.size(0), 4}, x.options());
    }
    return b;
  };
  RenderSettings s;
  s.height = s.width = 8;
  auto vr = volume_render(empty, CameraPose{}, s, torch::full({}, 0.01, f64));
  CHECK(vr.accumulation.max().item<double>() < 1e-6);
  CHECK(torch::all(vr.depth == kBackgroundDepth).item<bool>());
  CHECK_FALSE(vr.foreground.any().item<bool>());
}

TEST_CASE("sphere oracle: depth within 2/steps and shrinking with steps") {
  const double e16 = sphere_depth_error(16);
  const double e32 = sphere_depth_error(32);
  const double e64 = sphere_depth_error(64);
  CHECK(e32 <= 2.0 / 32);
  CHECK(e64 <= 2.0 / 64);
  CHECK(e32 <= e16);
  CHECK(e64 <= e32);
}

TEST_CASE("doubling steps moves sphere depth by less than 1e-2") {
  CameraPose pose;
  RenderSettings s;
  s.height = s.width = 16;
  s.steps = 32;
  auto beta = torch::full({}, 1e-3, f64);
  auto a = volume_render(sphere_field(0.5), pose, s, beta);
  s.steps = 64;
  auto b = volume_render(sphere_field(0.5), pose, s, beta);
  // Interior pixels only: a ray grazing the silhouette can slip between samples.
  auto both = torch::logical_and(a.foreground, b.foreground).to(torch::kFloat64);
  auto interior = torch::max_pool2d(1.0 - both.unsqueeze(0), 3, 1, 1).squeeze(0) == 0;
  REQUIRE(interior.sum().item<int64_t>() > 20);
  CHECK((a.depth - b.depth).abs().index({interior}).max().item<double>() < 1e-2);
}

TEST_CASE("rendering weights are non-negative and sum to at most one") {
  RenderSettings s;
  s.height = s.width = 12;
  s.steps = 20;
  auto vr = volume_render(sphere_field(0.6), CameraPose{}, s, torch::full({}, 0.05, f64));
  CHECK(vr.weights.min().item<double>() >= 0.0);
  CHECK(vr.weights.sum(1).max().item<double>() <= 1.0 + 1e-12);
}

TEST_CASE("mean_sigmoid matches direct quadrature") {
  auto a = torch::tensor({-3.0, 0.0, 2.0, 5.0, 1.0}, f64);
  auto b = torch::tensor({4.0, 0.0, 2.0 + 1e-9, -5.0, 1.5}, f64);
  auto got = mean_sigmoid(a, b);
  for (int i = 0; i < 5; ++i) {
    const double x0 = a[i].item<double>(), x1 = b[i].item<double>();
    double sum = 0.0;
    const int n = 20000;
    for (int k = 0; k < n; ++k) {
      const double x = x0 + (x1 - x0) * (k + 0.5) / n;
      sum += 1.0 / (1.0 + std::exp(-x));
    }
    CHECK(got[i].item<double>() == doctest::Approx(sum / n).epsilon(1e-7));
  }
}

TEST_CASE("layer specs: nine contiguous editable layers split 3/3/3") {
  auto specs = layer_specs(GeneratorConfig{});
  REQUIRE(specs.size() == 9);
  for (size_t j = 0; j < specs.size(); ++j) CHECK(specs[j].index == int(j) + 1);
  CHECK(specs[0].group == Group::Coarse);
  CHECK(specs[3].group == Group::Medium);
  CHECK(specs[8].group == Group::Fine);
  CHECK(specs[6].shape == std::vector<int64_t>{64, 67});
  CHECK(specs[8].shape == std::vector<int64_t>{32, 64});
  auto params = init_generator(GeneratorConfig{}, 0);
  for (const auto& [name, t] : params.frozen) {
    for (const auto& s : specs) CHECK(name != s.name);
  }
  for (const auto& s : specs) {
    CHECK(s.name.rfind("upsampler", 0) != 0);
    CHECK(s.name.rfind("mapping", 0) != 0);
  }
}

TEST_CASE("map_latent: biases at zero input, deterministic, distinct codes differ") {
  auto params = init_generator(tiny_config(), 3);
  auto zero = torch::zeros({16});
  auto w0 = map_latent(params, zero);
  CHECK(all_finite(w0));
  CHECK(bit_equal(map_latent(params, zero), w0));
  auto z1 = sample_z(params.config, 1);
  auto z2 = sample_z(params.config, 2);
  CHECK_FALSE(torch::equal(map_latent(params, z1), map_latent(params, z2)));
  CHECK_THROWS_AS(map_latent(params, torch::zeros({15})), InvalidInput);
  CHECK_THROWS_AS(map_latent(params, torch::full({16}, NAN)), InvalidInput);
}

TEST_CASE("sample_field: deterministic, colors in range, rejects bad input") {
  auto params = init_generator(tiny_config(), 4);
  auto w = map_latent(params, sample_z(params.config, 5));
  auto a = sample_field(params, {0.1, 0.2, 0.3}, {0.0, 0.0, 1.0}, w);
  auto b = sample_field(params, {0.1, 0.2, 0.3}, {0.0, 0.0, 1.0}, w);
  CHECK(a.sdf == b.sdf);
  CHECK(a.feature == b.feature);
  auto probes = torch::rand({1000, 3}) * 2.0 - 1.0;
  auto dirs = torch::randn({1000, 3});
  dirs = dirs / dirs.norm(2, -1, true);
  auto batch = field_forward(params, params.layers, w, probes, dirs);
  CHECK(batch.color.min().item<double>() >= 0.0);
  CHECK(batch.color.max().item<double>() <= 1.0);
  CHECK_THROWS_AS(sample_field(params, {0, 0, 0}, {0.0, 0.0, 2.0}, w), InvalidInput);
  CHECK_THROWS_AS(sample_field(params, {NAN, 0, 0}, {0.0, 0.0, 1.0}, w), InvalidInput);
}

TEST_CASE("upsample: shape contract, constant output for zero input, gradient flows") {
  auto params = init_generator(tiny_config(), 6);
  const auto& c = params.config;
  auto img = upsample(params, torch::zeros({c.feature_res, c.feature_res, c.feature_dim}));
  CHECK(img.size(0) == c.feature_res * c.upscale_factor());
  CHECK(img.size(2) == 3);
  CHECK((img - img[0][0]).abs().max().item<double>() < 1e-6);
  auto fm = torch::randn({c.feature_res, c.feature_res, c.feature_dim}).requires_grad_(true);
  auto out = upsample(params, fm);
  CHECK(out.min().item<double>() >= 0.0);
  CHECK(out.max().item<double>() <= 1.0);
  (out * torch::randn(out.sizes())).sum().backward();
  CHECK(fm.grad().abs().sum().item<double>() > 0.0);
  CHECK_THROWS_AS(upsample(params, torch::zeros({c.feature_res, c.feature_res, 3})), InvalidInput);
}

TEST_CASE("generate is deterministic and echoes the pose") {
  auto params = init_generator(tiny_config(), 7);
  auto z = sample_z(params.config, 8);
  CameraPose pose;
  pose.yaw = 0.2;
  auto a = generate(params, z, pose);
  auto b = generate(params, z, pose);
  CHECK(bit_equal(a.image, b.image));
  CHECK(bit_equal(a.depth, b.depth));
  CHECK(a.pose == pose);
  CHECK(a.image.size(0) == params.config.image_res());
}

TEST_CASE("substitute_forward: identity, perturbation, gradient to every layer") {
  auto params = init_generator(tiny_config(), 9);
  auto z = sample_z(params.config, 10);
  CameraPose pose;
  auto base = generate(params, z, pose);
  auto same = substitute_forward(params, params.layers, z, pose);
  CHECK(bit_equal(base.image, same.image));

  auto bumped = params.layers;
  bumped[4] = bumped[4] + 1e-3;
  auto moved = substitute_forward(params, bumped, z, pose);
  CHECK((moved.image - base.image).abs().max().item<double>() > 0.0);

  std::vector<torch::Tensor> repl;
  for (const auto& t : params.layers) repl.push_back(t.clone().requires_grad_(true));
  substitute_forward(params, repl, z, pose).image.mean().backward();
  for (size_t j = 0; j < repl.size(); ++j) {
    INFO("layer " << j + 1);
    CHECK(repl[j].grad().abs().sum().item<double>() > 0.0);
  }

  auto wrong = params.layers;
  wrong[0] = torch::zeros({3, 3});
  CHECK_THROWS_AS(substitute_forward(params, wrong, z, pose), InvalidInput);
}

TEST_CASE("generator checkpoints round-trip and reject tampering") {
  auto params = init_generator(tiny_config(), 11);
  auto path = std::filesystem::temp_directory_path() / "hyperedit_gen_roundtrip.ckpt";
  save_generator(params, path);
  auto back = load_generator(path);
  CHECK(back.config == params.config);
  for (size_t j = 0; j < params.layers.size(); ++j) CHECK(bit_equal(back.layers[j], params.layers[j]));
  for (const auto& [k, v] : params.frozen) CHECK(bit_equal(back.frozen_at(k), v));

  auto archive = read_archive(path);
  archive.manifest["dims"]["width"] = 17;
  CHECK_THROWS(generator_from_archive(archive));

  std::ofstream(path, std::ios::binary) << "not an archive";
  CHECK_THROWS_AS(load_generator(path), CheckpointError);
  std::filesystem::remove(path);
}
