// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>

#include <ATen/CPUGeneratorImpl.h>

#include "CLI11.hpp"
#include "hyperedit/checkpoint.hpp"
#include "hyperedit/config.hpp"
#include "hyperedit/edit_request.hpp"
#include "hyperedit/evaluation.hpp"
#include "hyperedit/log.hpp"
#include "hyperedit/losses.hpp"
#include "hyperedit/procedural_face.hpp"
#include "hyperedit/training.hpp"

using namespace hyperedit;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

void randomize_outputs(HyperModule& hyper, uint64_t seed, double scale) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& item : hyper->named_parameters()) {
    if (item.key().find("_out.") != std::string::npos) {
      item.value().copy_((torch::randn(item.value().sizes(), gen, torch::kFloat64) * scale)
                             .to(item.value().scalar_type()));
    }
  }
}

std::vector<Point3> random_cloud(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Point3> out(n);
  for (auto& p : out) p = {u(rng), u(rng), u(rng)};
  return out;
}

double brute_chamfer(const std::vector<Point3>& a, const std::vector<Point3>& b, double r) {
  auto nn = [](const Point3& q, const std::vector<Point3>& cloud) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : cloud) {
      best = std::min(best, std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                      (p[2] - q[2]) * (p[2] - q[2])));
    }
    return best;
  };
  auto side = [&](const std::vector<Point3>& from, const std::vector<Point3>& to) {
    double sum = 0.0;
    int n = 0;
    for (const auto& p : from) {
      const double d = nn(p, to);
      if (d <= r) sum += d, ++n;
    }
    return n ? sum / n : 0.0;
  };
  return 0.5 * (side(a, b) + side(b, a));
}

struct Context {
  GeneratorParams theta;
  ExperimentConfig experiment;
  EmbedderSuite embedders = stub_embedders();
};

std::map<Level, PromptPair> all_levels() {
  return {{Level::Shape, {"Face", "Fat face", Level::Shape}},
          {Level::Attribute, {"Face", "Silver hair", Level::Attribute}},
          {Level::Style, {"Photo", "Painting", Level::Style}}};
}

// --- 1 -------------------------------------------------------------------------------

Outcome identity_edit(const Context& ctx) {
  const auto t0 = Clock::now();
  torch::NoGradGuard no_grad;
  auto zero_hyper = make_hyper(ctx.theta, HyperConfig{});
  auto random_hyper = make_hyper(ctx.theta, HyperConfig{});
  randomize_outputs(random_hyper, 1, 0.05);

  const auto& joint = *ctx.embedders.joint;
  auto via_zero = compose_edit(ctx.theta, zero_hyper, all_levels(), {1, 1, 1}, joint);
  auto via_alpha = compose_edit(ctx.theta, random_hyper, all_levels(), {0, 0, 0}, joint);
  int mismatches = 0, renders = 0;
  for (int id = 0; id < 10; ++id) {
    auto z = sample_z(ctx.theta.config, 1000 + id, ctx.theta.dtype());
    for (const auto& pose : yaw_sweep(kDefaultYaws)) {
      auto base = generate(ctx.theta, z, pose);
      for (const auto* edited : {&via_zero, &via_alpha}) {
        auto out = generate(*edited, z, pose);
        ++renders;
        if (!bit_equal(out.image, base.image) || !bit_equal(out.depth, base.depth)) ++mismatches;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 60.0,
          log::format("%d/%d edited renders differ from base, %.1fs (limit 60s)", mismatches,
                      renders, secs)};
}

// --- 2 -------------------------------------------------------------------------------

Outcome group_exclusivity(const Context& ctx) {
  const auto& bank = ctx.experiment.training.prompt_bank;
  std::mt19937_64 rng(2);
  int violations = 0, checks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto hyper = make_hyper(ctx.theta, HyperConfig{});
    randomize_outputs(hyper, 100 + trial, 0.05);
    torch::NoGradGuard no_grad;
    for (Level level : kAllLevels) {
      std::vector<PromptPair> choices;
      for (const auto& p : bank) {
        if (p.level == level) choices.push_back(p);
      }
      const auto& prompt = choices[rng() % choices.size()];
      auto edited = compose_edit(ctx.theta, hyper, {{level, prompt}}, {1, 1, 1},
                                 *ctx.embedders.joint);
      const Group own = group_for(level);
      for (size_t j = 0; j < ctx.theta.layers.size(); ++j) {
        const bool same = bit_equal(edited.layers[j], ctx.theta.layers[j]);
        const bool inside = ctx.theta.specs[j].group == own;
        ++checks;
        // Outside the owning group: unchanged. Inside: actually edited.
        if (inside == same) ++violations;
      }
    }
  }
  return {violations == 0, log::format("%d violations in %d layer checks over 20 trials",
                                       violations, checks)};
}

// --- 3 -------------------------------------------------------------------------------

Outcome alpha_algebra(const Context& ctx) {
  auto theta = ctx.theta.clone(torch::kFloat64);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(300 + trial);
    OffsetSet offsets;
    for (const auto& s : theta.specs) {
      offsets.offsets.push_back(torch::randn(s.shape, gen, torch::kFloat64) * 0.1);
      offsets.groups.push_back(s.group);
      offsets.active.push_back(true);
    }
    EditCoefficients a{u(rng), u(rng), u(rng)};
    auto scaled = edited_layers(theta, offsets, a);
    auto unit = edited_layers(theta, offsets, {1, 1, 1});
    for (size_t j = 0; j < theta.layers.size(); ++j) {
      const double alpha = a.for_group(theta.specs[j].group);
      auto lhs = scaled[j] - theta.layers[j];
      auto rhs = alpha * (unit[j] - theta.layers[j]);
      worst = std::max(worst, (lhs - rhs).abs().max().item<double>());
    }
  }
  return {worst <= 1e-12, log::format("max deviation %.3e over 100 offset sets (limit 1e-12)", worst)};
}

// --- 4 -------------------------------------------------------------------------------

Outcome gradient_check(const Context& ctx) {
  auto theta = ctx.theta.clone(torch::kFloat64);
  for (auto& t : theta.layers) t.requires_grad_(false);
  TrainingConfig config = ctx.experiment.training;
  config.feature_res = 8;
  config.render_steps = 16;
  config.views = 2;
  config.id_yaws = {-0.3, 0.3};
  config.prompt_bank = {{"Face", "Fat face", Level::Shape},
                        {"Face", "Silver hair", Level::Attribute},
                        {"Photo", "Painting", Level::Style}};
  auto hyper = make_hyper(theta, config.hyper);
  hyper->to(torch::kFloat64);
  // Edits must be well away from zero: with tiny edits the image change is a difference of
  // nearly equal embeddings and round-off swamps a 1e-5 central difference.
  randomize_outputs(hyper, 4, 0.2);

  const int step = 5;
  hyper->zero_grad();
  compute_step_loss(hyper, theta, config, ctx.embedders, step).total.backward();

  std::vector<std::pair<std::string, torch::Tensor>> params;
  for (const auto& item : hyper->named_parameters()) params.emplace_back(item.key(), item.value());
  std::mt19937_64 rng(4);
  const double h = 1e-5;
  double worst = 0.0;
  int failures = 0;
  std::string sample;
  for (int k = 0; k < 20; ++k) {
    const auto& [name, p] = params[rng() % params.size()];
    const int64_t idx = int64_t(rng() % uint64_t(p.numel()));
    const double analytic = p.grad().reshape(-1)[idx].item<double>();
    auto flat = p.detach().view(-1);
    const double orig = flat[idx].item<double>();
    auto central = [&](double step_size) {
      torch::NoGradGuard no_grad;
      flat[idx] = orig + step_size;
      const double fp = compute_step_loss(hyper, theta, config, ctx.embedders, step).parts.total;
      flat[idx] = orig - step_size;
      const double fm = compute_step_loss(hyper, theta, config, ctx.embedders, step).parts.total;
      flat[idx] = orig;
      return (fp - fm) / (2 * step_size);
    };
    const double fd = central(h);
    const double scale = std::max(std::abs(fd), std::abs(analytic));
    const double rel = scale > 0 ? std::abs(fd - analytic) / scale : 0.0;
    if (rel > worst) {
      worst = rel;
      sample = log::format(" at %s[%lld] (analytic %.6e, fd %.6e", name.c_str(),
                           static_cast<long long>(idx), analytic, fd);
      // Diagnostic only: larger steps separate round-off from a wrong gradient.
      if (rel > 1e-3) {
        for (double big : {1e-4, 1e-3}) sample += log::format(", fd@%.0e %.6e", big, central(big));
      }
      sample += ")";
    }
    if (rel > 1e-3) ++failures;
  }
  return {failures == 0,
          log::format("%d/20 weights exceed rel err 1e-3, worst %.2e", failures, worst) + sample};
}

// --- 5 -------------------------------------------------------------------------------

Outcome training_smoke(const Context& ctx) {
  const auto t0 = Clock::now();
  auto theta = ctx.theta.clone();
  for (auto& t : theta.layers) t.requires_grad_(false);
  const auto before = theta.clone();

  TrainingConfig config = ctx.experiment.training;
  config.steps = 200;
  config.seed = 0;
  config.checkpoint_every = 0;
  config.prompt_bank = {{"Photo", "Painting", Level::Style}};
  auto hyper = make_hyper(theta, config.hyper);
  auto result = train(hyper, theta, config, ctx.embedders);

  std::vector<double> dir;
  for (const auto& r : result.history) dir.push_back(r.dir);
  const double first = window_mean(dir, 0, 20);
  const double last = window_mean(dir, dir.size() - 20, dir.size());
  bool frozen = true;
  for (size_t j = 0; j < theta.layers.size(); ++j) frozen &= bit_equal(theta.layers[j], before.layers[j]);
  for (const auto& [k, v] : before.frozen) frozen &= bit_equal(theta.frozen_at(k), v);
  const double secs = seconds_since(t0);
  const bool pass = last <= 0.5 * first && frozen && secs <= 300.0;
  return {pass, log::format("L_dir first-20 %.4f, last-20 %.4f (ratio %.3f, limit 0.5), base %s, "
                            "%.0fs (limit 300s)",
                            first, last, last / first, frozen ? "unchanged" : "CHANGED", secs)};
}

// --- 6 -------------------------------------------------------------------------------

Outcome chamfer_oracle() {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> size(1, 500);
  double worst = 0.0;
  bool exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_cloud(rng, size(rng));
    auto b = random_cloud(rng, size(rng));
    auto fast = modified_chamfer(a, b);
    worst = std::max(worst, std::abs(fast.value - brute_chamfer(a, b, fast.r_vis)));
    exact &= modified_chamfer(a, a).value == 0.0;
    exact &= modified_chamfer(a, b).value == modified_chamfer(b, a).value;
  }
  return {worst <= 1e-9 && exact,
          log::format("max |kd - brute| %.2e over 50 pairs (limit 1e-9); self-zero and symmetry %s",
                      worst, exact ? "exact" : "VIOLATED")};
}

// --- 7 -------------------------------------------------------------------------------

Outcome sphere_oracle() {
  const double radius = 0.5;
  FieldFn sphere = [radius](const torch::Tensor& x, const torch::Tensor&, bool appearance) {
    FieldBatch b;
    b.sdf = x.norm(2, -1) - radius;
    if (appearance) {
      b.color = torch::full({x.size(0), 3}, 0.5, x.options());
      b.feature = torch::ones({x.size(0), 4}, x.options());
    }
    return b;
  };
  CameraPose pose;
  pose.yaw = 0.2;
  pose.pitch = 0.1;
  const int res = 32;
  auto rays = camera_rays(pose, res, res, torch::kFloat64);
  auto bdot = (rays.origins * rays.directions).sum(-1);
  auto disc = bdot * bdot - ((rays.origins * rays.origins).sum(-1) - radius * radius);
  auto truth = (-bdot - torch::sqrt(disc.clamp_min(0))).reshape({res, res});
  auto hit = (disc > 0).reshape({res, res});

  std::vector<double> errors;
  std::string detail;
  bool pass = true;
  for (int steps : {32, 64}) {
    RenderSettings s;
    s.height = s.width = res;
    s.steps = steps;
    auto vr = volume_render(sphere, pose, s, torch::full({}, 1e-3, torch::kFloat64));
    auto both = torch::logical_and(hit, vr.foreground);
    const double err = (vr.depth - truth).abs().index({both}).max().item<double>();
    errors.push_back(err);
    pass &= err <= 2.0 / steps;
    detail += log::format("steps %d: max err %.4f (limit %.4f); ", steps, err, 2.0 / steps);
  }
  pass &= errors[1] < errors[0];
  return {pass, detail + (errors[1] < errors[0] ? "shrinking" : "NOT shrinking")};
}

// --- 8 -------------------------------------------------------------------------------

Outcome shape_edit_depth(const Context& ctx) {
  const auto t0 = Clock::now();
  auto theta = ctx.theta.clone();
  for (auto& t : theta.layers) t.requires_grad_(false);
  TrainingConfig config = ctx.experiment.training;
  config.steps = 150;
  config.checkpoint_every = 0;
  PromptPair prompt{"Face", "Fat face", Level::Shape};
  config.prompt_bank = {prompt};
  auto hyper = make_hyper(theta, config.hyper);
  train(hyper, theta, config, ctx.embedders);

  torch::NoGradGuard no_grad;
  auto edited = compose_edit(theta, hyper, {{Level::Shape, prompt}}, {1, 1, 1}, *ctx.embedders.joint);
  double change = 0.0;
  for (size_t j = 0; j < theta.layers.size(); ++j) {
    change = std::max(change, (edited.layers[j] - theta.layers[j]).abs().max().item<double>());
  }
  EvalConfig ec = ctx.experiment.evaluation;
  ec.n_identities = 20;
  auto mean = [](const std::vector<IdentityScore>& s) {
    double sum = 0.0;
    int n = 0;
    for (const auto& x : s) {
      if (!x.skipped) sum += x.value, ++n;
    }
    return std::make_pair(n ? sum / n : NAN, int(s.size()) - n);
  };
  auto [base_mean, base_skips] = mean(depth_consistency(theta, ec));
  auto [edit_mean, edit_skips] = mean(depth_consistency(edited, ec));
  const double secs = seconds_since(t0);
  const bool pass = change > 0.0 && edit_skips == 0 && base_skips == 0 &&
                    edit_mean <= 1.2 * base_mean && secs <= 600.0;
  return {pass, log::format("edited %.4f vs base %.4f (ratio %.3f, limit 1.2), skipped %d/%d, "
                            "max weight change %.2e, %.0fs (limit 600s)",
                            edit_mean, base_mean, edit_mean / base_mean, edit_skips, base_skips,
                            change, secs)};
}

// --- 9 -------------------------------------------------------------------------------

Outcome loss_ranges(const Context& ctx) {
  const auto& joint = *ctx.embedders.joint;
  const auto& identity = *ctx.embedders.identity;
  const std::vector<std::string> texts{"Face", "Fat face", "Silver hair", "Painting", "Photo",
                                       "Elf", "Blue eyes", "Bearded face", "Old face", "Pixar"};
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(9);
  auto image = [&](int res) { return torch::rand({res, res, 3}, gen, torch::kFloat64); };
  int bad_dir = 0, bad_id = 0, bad_region = 0, bad_total = 0;
  double worst_total = 0.0;
  torch::NoGradGuard no_grad;
  for (int i = 0; i < 10000; ++i) {
    const int res = 8 + int(rng() % 3) * 4;
    auto base = image(res);
    // Mix of unrelated, slightly perturbed and identical edited images.
    torch::Tensor edited;
    switch (i % 3) {
      case 0: edited = image(res); break;
      case 1: edited = (base + 0.01 * (image(res) - 0.5)).clamp(0, 1); break;
      default: edited = base.clone();
    }
    const auto& src = texts[rng() % texts.size()];
    const auto& tgt = texts[rng() % texts.size()];
    const double dir = directional_loss(joint, src, tgt, base, edited).item<double>();
    const double id = id_loss(identity, {base}, {edited}).item<double>();
    auto mask = torch::rand({res, res}, gen) < u(rng);
    const double region = region_loss(mask, base, edited).item<double>();
    LossWeights lambda{u(rng) * 2, u(rng) * 2, u(rng) * 2};
    const double total = total_loss(torch::tensor(dir, torch::kFloat64), torch::tensor(id, torch::kFloat64),
                                    torch::tensor(region, torch::kFloat64), lambda)
                             .item<double>();
    const double expected = lambda.dir * dir + lambda.id * id + lambda.region * region;
    bad_dir += !(dir >= 0.0 && dir <= 2.0);
    bad_id += !(id >= 0.0 && id <= 2.0);
    bad_region += !(region >= 0.0);
    worst_total = std::max(worst_total, std::abs(total - expected));
    bad_total += !(std::abs(total - expected) <= 1e-9);
  }
  return {bad_dir + bad_id + bad_region + bad_total == 0,
          log::format("out of range over 10^4 inputs: dir %d, id %d, region %d; total mismatches %d "
                      "(worst %.1e)",
                      bad_dir, bad_id, bad_region, bad_total, worst_total)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string ckpt;
#ifdef HYPEREDIT_TOY_CKPT_DEFAULT
  ckpt = HYPEREDIT_TOY_CKPT_DEFAULT;
#endif
  std::string config_path = HYPEREDIT_SOURCE_DIR "/configs/toy.json";
  std::vector<int> only;
  app.add_option("--generator-ckpt", ckpt, "pretrained toy generator (pretrained here if missing)");
  app.add_option("--config", config_path);
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  log::set_level("warn");
  Context ctx;
  ctx.experiment = load_experiment(config_path);
  if (ckpt.empty() || !fs::exists(ckpt)) {
    std::printf("no generator checkpoint; pretraining one (%d iterations)\n",
                ctx.experiment.pretrain.iterations);
    ctx.theta = pretrain_toy_generator(ctx.experiment.generator, ctx.experiment.pretrain);
    if (!ckpt.empty()) save_generator(ctx.theta, ckpt);
  } else {
    ctx.theta = load_generator(ckpt);
  }
  ctx.embedders = load_embedders(ctx.experiment.embedders);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"identity edit", [&] { return identity_edit(ctx); }},
      {"group exclusivity", [&] { return group_exclusivity(ctx); }},
      {"alpha algebra", [&] { return alpha_algebra(ctx); }},
      {"gradient check", [&] { return gradient_check(ctx); }},
      {"training smoke", [&] { return training_smoke(ctx); }},
      {"chamfer oracle", [] { return chamfer_oracle(); }},
      {"sphere depth oracle", [] { return sphere_oracle(); }},
      {"shape-edit depth error", [&] { return shape_edit_depth(ctx); }},
      {"loss ranges", [&] { return loss_ranges(ctx); }},
  };

  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int number = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
