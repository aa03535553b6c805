#include "hyperedit/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "hyperedit/log.hpp"

namespace hyperedit {

namespace {

// Splits one 64-bit seed into per-step streams.
uint64_t mix_seed(uint64_t seed, uint64_t step, uint64_t salt) {
  uint64_t x = seed * 0x9E3779B97F4A7C15ull + step * 0xBF58476D1CE4E5B9ull + salt;
  x ^= x >> 31;
  x *= 0x94D049BB133111EBull;
  return x ^ (x >> 29);
}

std::map<Level, std::vector<PromptPair>> bank_by_level(const std::vector<PromptPair>& bank) {
  std::map<Level, std::vector<PromptPair>> out;
  for (const auto& p : bank) out[p.level].push_back(p);
  return out;
}

}  // namespace

bool level_uses_id(Level level) { return level != Level::Style; }
bool level_uses_region(Level level) { return level == Level::Attribute; }

void TrainingConfig::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  require(ok(lambda.dir) && ok(lambda.id) && ok(lambda.region),
          "loss weights must be finite and non-negative");
  require(views >= 1, "views must be >= 1");
  require(id_yaws.empty() || static_cast<int>(id_yaws.size()) == views,
          "id_yaws must list exactly `views` yaws");
  require(batch >= 1, "batch must be >= 1");
  require(std::isfinite(lr) && lr >= 0.0, "lr must be finite and non-negative");
  require(steps >= 0, "steps must be >= 0");
  require(std::isfinite(sigma) && sigma >= 0.0, "sigma must be >= 0");
  require(!prompt_bank.empty(), "prompt bank is empty");
  for (const auto& p : prompt_bank) p.validate();
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(feature_res >= 2 && render_steps >= 2, "training render settings too small");
  require(std::isfinite(max_yaw) && max_yaw >= 0.0, "max_yaw must be >= 0");
}

std::vector<CameraPose> TrainingConfig::id_poses() const {
  std::vector<double> yaws = id_yaws;
  if (yaws.empty()) {
    for (int i = 0; i < views; ++i) {
      yaws.push_back(views == 1 ? 0.0 : -0.4 + 0.8 * i / (views - 1));
    }
  }
  return yaw_sweep(yaws);
}

HyperModule make_hyper(const GeneratorParams& theta, const HyperConfig& config,
                       std::optional<GroupAssignment> grouping) {
  return HyperModule(theta.specs, grouping.value_or(GroupAssignment::from_specs(theta.specs)),
                     config);
}

StepLoss compute_step_loss(const HyperModule& hyper, const GeneratorParams& theta,
                           const TrainingConfig& config, const EmbedderSuite& embedders,
                           int step) {
  const auto levels = bank_by_level(config.prompt_bank);
  const auto dtype = theta.dtype();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed(config.seed, step, 1));
  auto draw = [&] { return torch::rand({1}, gen, torch::kFloat64).item<double>(); };

  RenderSettings rs = native_settings(theta.config);
  rs.height = rs.width = config.feature_res;
  rs.steps = config.render_steps;
  const auto id_poses = config.id_poses();

  StepLoss out;
  auto zero = torch::zeros({}, torch::TensorOptions().dtype(dtype));
  torch::Tensor dir_sum = zero, id_sum = zero, region_sum = zero;
  int terms = 0;

  for (const auto& [level, pairs] : levels) {
    const auto& prompt = pairs[std::min<size_t>(pairs.size() - 1, size_t(draw() * pairs.size()))];
    out.prompts.push_back(prompt);
    const auto f = encode_direction(prompt.src, prompt.tgt, level, *embedders.joint);
    const auto text_delta = f.vector;

    for (int b = 0; b < config.batch; ++b) {
      const uint64_t noise_seed = mix_seed(config.seed, step, 100 + 3 * b + int(level));
      auto noisy = perturb_direction(f, config.sigma, noise_seed);
      auto offsets = predict_offsets(hyper, {{level, noisy}});
      auto layers = edited_layers(theta, offsets, {});

      auto z = torch::randn({theta.config.latent_dim}, gen,
                            torch::TensorOptions().dtype(dtype));
      CameraPose pose;
      pose.yaw = (2.0 * draw() - 1.0) * config.max_yaw;

      torch::Tensor base_img;
      {
        torch::NoGradGuard no_grad;
        base_img = generate(theta, z, pose, rs).image;
      }
      auto edited_img = substitute_forward(theta, layers, z, pose, rs).image;
      dir_sum = dir_sum + directional_loss(*embedders.joint, text_delta, base_img, edited_img);

      if (level_uses_id(level) && config.lambda.id != 0.0) {
        id_sum = id_sum + id_loss(*embedders.identity, theta, layers, z, id_poses, rs);
      }
      if (level_uses_region(level) && config.lambda.region != 0.0) {
        auto mask = irrelevant_mask(*embedders.segmenter, base_img,
                                    relevant_region_for(prompt.tgt, *embedders.joint));
        region_sum = region_sum + region_loss(mask, base_img, edited_img);
      }
      ++terms;
    }
  }

  auto dir = dir_sum / terms;
  auto id = id_sum / terms;
  auto region = region_sum / terms;
  out.total = total_loss(dir, id, region, config.lambda);
  out.parts = {dir.item<double>(), id.item<double>(), region.item<double>(),
               out.total.item<double>()};
  return out;
}

StepResult train_step(HyperModule& hyper, torch::optim::Optimizer& optimizer,
                      const GeneratorParams& theta, const TrainingConfig& config,
                      const EmbedderSuite& embedders, int step) {
  StepResult result;
  optimizer.zero_grad();
  auto loss = compute_step_loss(hyper, theta, config, embedders, step);
  result.losses = loss.parts;
  if (!std::isfinite(loss.parts.total)) {
    result.error = "non-finite loss at step " + std::to_string(step) + ", update skipped";
    optimizer.zero_grad();
    return result;
  }
  loss.total.backward();
  for (const auto& p : hyper->parameters()) {
    if (p.grad().defined() && !all_finite(p.grad())) {
      result.error = "non-finite gradient at step " + std::to_string(step) + ", update skipped";
      optimizer.zero_grad();
      return result;
    }
  }
  optimizer.step();
  result.applied = true;
  return result;
}

TrainResult train(HyperModule& hyper, const GeneratorParams& theta, const TrainingConfig& config,
                  const EmbedderSuite& embedders, const TrainOutputs& outputs,
                  const std::function<void(int, const LossBreakdown&)>& on_step) {
  config.validate();
  theta.validate();
  require(embedders.joint && embedders.identity && embedders.segmenter,
          "train: embedder suite is incomplete");
  for (const auto& t : theta.layers) {
    require(!t.requires_grad(), "train: generator parameters must be frozen");
  }

  TrainResult result;
  torch::optim::Adam optimizer(hyper->parameters(), torch::optim::AdamOptions(config.lr));

  std::ofstream history;
  if (!outputs.dir.empty()) {
    std::filesystem::create_directories(outputs.dir);
    history.open(outputs.dir / outputs.history_file);
    require(history.good(), "cannot write " + (outputs.dir / outputs.history_file).string());
    history << "step,dir,id,region,total\n" << std::setprecision(10);
  }
  auto checkpoint = [&](int step) {
    if (outputs.dir.empty()) return;
    auto path = outputs.dir / ("hyper_" + std::to_string(step) + ".ckpt");
    save_hyper(hyper, path);
    result.checkpoints.push_back(path);
  };

  for (int step = 0; step < config.steps; ++step) {
    auto r = train_step(hyper, optimizer, theta, config, embedders, step);
    if (!r.applied) {
      ++result.skipped_steps;
      log::warn(r.error);
    }
    result.history.push_back(r.losses);
    if (history.is_open()) {
      history << step << ',' << r.losses.dir << ',' << r.losses.id << ',' << r.losses.region
              << ',' << r.losses.total << '\n';
    }
    if (on_step) on_step(step, r.losses);
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 &&
        step + 1 != config.steps) {
      checkpoint(step + 1);
    }
  }
  checkpoint(config.steps);
  return result;
}

double window_mean(const std::vector<double>& values, size_t begin, size_t end) {
  require(begin < end && end <= values.size(), "window_mean: bad window");
  return std::accumulate(values.begin() + begin, values.begin() + end, 0.0) / double(end - begin);
}

}  // namespace hyperedit
