#pragma once

#include <set>
#include <string>
#include <vector>

#include "hyperedit/encoders.hpp"
#include "hyperedit/generator.hpp"

namespace hyperedit {

/// Below this norm a text or image change counts as absent.
inline constexpr double kDegenerateNorm = 1e-8;

/// 1 - cos(dT, dI) for a precomputed text change dT = E(tgt) - E(src).
///
/// If either change is shorter than kDegenerateNorm the value is exactly 1. When only
/// dI is degenerate (the zero-offset start of training) the returned tensor still carries
/// a gradient pushing dI toward dT, otherwise training from zero-initialized predictors
/// could never leave the identity.
torch::Tensor directional_loss(const JointEmbedder& embedder, const torch::Tensor& text_delta,
                               const torch::Tensor& base_img, const torch::Tensor& edited_img);
torch::Tensor directional_loss(const JointEmbedder& embedder, const std::string& src_text,
                               const std::string& tgt_text, const torch::Tensor& base_img,
                               const torch::Tensor& edited_img);

/// Mean over view pairs of 1 - <F(edited_i), F(base_i)>.
torch::Tensor id_loss(const IdentityEmbedder& identity, const std::vector<torch::Tensor>& base,
                      const std::vector<torch::Tensor>& edited);

/// Renders both generators at every pose and applies the image-level id_loss.
/// `edited_layers` replaces the editable weights of `base_params`.
torch::Tensor id_loss(const IdentityEmbedder& identity, const GeneratorParams& base_params,
                      std::span<const torch::Tensor> edited_layers, const torch::Tensor& z,
                      const std::vector<CameraPose>& poses, const RenderSettings& settings);

/// Pixels of `base` whose label is outside `relevant` ([H, W] bool).
torch::Tensor irrelevant_mask(const RegionSegmenter& segmenter, const torch::Tensor& base,
                              const std::set<Region>& relevant);

/// ||(edited - base)[mask]||_2 / k, k = number of masked pixels. Zero when k = 0.
torch::Tensor region_loss(const torch::Tensor& mask, const torch::Tensor& base_img,
                          const torch::Tensor& edited_img);
torch::Tensor region_loss(const RegionSegmenter& segmenter, const JointEmbedder& embedder,
                          const std::string& prompt, const torch::Tensor& base_img,
                          const torch::Tensor& edited_img);

struct LossWeights {
  double dir = 1.0;
  double id = 0.3;
  double region = 0.5;
};

struct LossBreakdown {
  double dir = 0.0;
  double id = 0.0;
  double region = 0.0;
  double total = 0.0;
};

/// total = dir*lambda.dir + id*lambda.id + region*lambda.region.
LossBreakdown total_loss(double dir, double id, double region, const LossWeights& lambda);
torch::Tensor total_loss(const torch::Tensor& dir, const torch::Tensor& id,
                         const torch::Tensor& region, const LossWeights& lambda);

}  // namespace hyperedit
