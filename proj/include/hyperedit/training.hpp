#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hyperedit/encoders.hpp"
#include "hyperedit/hyper_module.hpp"
#include "hyperedit/losses.hpp"

namespace hyperedit {

struct TrainingConfig {
  LossWeights lambda;
  int views = 3;                    // identity-loss views
  std::vector<double> id_yaws;      // empty: `views` yaws spread over [-0.4, 0.4]
  int batch = 1;                    // identities per level per step
  double lr = 1e-3;
  int steps = 1000;
  double sigma = 0.05;
  uint64_t seed = 0;
  std::vector<PromptPair> prompt_bank;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  int feature_res = 16;      // training render resolution (image = feature_res * upscale)
  int render_steps = 24;
  double max_yaw = 0.4;      // directional-loss view yaw range
  HyperConfig hyper;

  void validate() const;
  std::vector<CameraPose> id_poses() const;
};

/// Identity loss applies to shape and attribute steps, region loss to attribute steps.
bool level_uses_id(Level level);
bool level_uses_region(Level level);

/// Loss of one step, a pure function of (H, theta, config, step).
struct StepLoss {
  torch::Tensor total;
  LossBreakdown parts;
  std::vector<PromptPair> prompts;  // one per trained level
};

StepLoss compute_step_loss(const HyperModule& hyper, const GeneratorParams& theta,
                           const TrainingConfig& config, const EmbedderSuite& embedders,
                           int step);

struct StepResult {
  LossBreakdown losses;
  bool applied = false;  // false when the loss was non-finite and the update skipped
  std::string error;
};

/// One optimizer update on the hyper-module. theta never receives gradient.
StepResult train_step(HyperModule& hyper, torch::optim::Optimizer& optimizer,
                      const GeneratorParams& theta, const TrainingConfig& config,
                      const EmbedderSuite& embedders, int step);

struct TrainOutputs {
  std::filesystem::path dir;  // empty: nothing written
  std::string history_file = "loss_history.csv";
};

struct TrainResult {
  std::vector<LossBreakdown> history;  // one row per step
  std::vector<std::filesystem::path> checkpoints;
  int skipped_steps = 0;
};

/// Runs config.steps steps. Writes `hyper_{step}.ckpt` every checkpoint_every steps and at
/// the end, and a CSV history (step,dir,id,region,total) when outputs.dir is set.
TrainResult train(HyperModule& hyper, const GeneratorParams& theta, const TrainingConfig& config,
                  const EmbedderSuite& embedders, const TrainOutputs& outputs = {},
                  const std::function<void(int, const LossBreakdown&)>& on_step = {});

/// Fresh hyper-module for a generator under the config's hyper settings.
HyperModule make_hyper(const GeneratorParams& theta, const HyperConfig& config,
                       std::optional<GroupAssignment> grouping = std::nullopt);

/// Mean of values[begin, end).
double window_mean(const std::vector<double>& values, size_t begin, size_t end);

}  // namespace hyperedit
