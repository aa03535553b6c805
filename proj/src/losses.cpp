#include "hyperedit/losses.hpp"

#include "hyperedit/log.hpp"

namespace hyperedit {

torch::Tensor directional_loss(const JointEmbedder& embedder, const torch::Tensor& text_delta,
                               const torch::Tensor& base_img, const torch::Tensor& edited_img) {
  require(base_img.sizes() == edited_img.sizes(), "directional_loss: image shapes differ");
  require(text_delta.defined() && text_delta.dim() == 1, "directional_loss: bad text direction");
  const auto dtype = edited_img.scalar_type();
  auto dT = text_delta.to(dtype);
  auto dI = embedder.embed_image(edited_img) - embedder.embed_image(base_img);
  const double nT = dT.norm().item<double>();
  const double nI = dI.norm().item<double>();
  auto one = torch::ones({}, edited_img.options());
  if (nT < kDegenerateNorm) return one;
  if (nI < kDegenerateNorm) {
    // Value stays exactly 1; the gradient is that of -<dT/|dT|, dI>.
    auto s = -torch::dot(dT / nT, dI);
    return one + (s - s.detach());
  }
  auto cos = torch::dot(dT, dI) / (dT.norm() * dI.norm());
  return (1.0 - cos).clamp(0.0, 2.0);
}

torch::Tensor directional_loss(const JointEmbedder& embedder, const std::string& src_text,
                               const std::string& tgt_text, const torch::Tensor& base_img,
                               const torch::Tensor& edited_img) {
  auto dT = embedder.embed_text(tgt_text) - embedder.embed_text(src_text);
  return directional_loss(embedder, dT, base_img, edited_img);
}

torch::Tensor id_loss(const IdentityEmbedder& identity, const std::vector<torch::Tensor>& base,
                      const std::vector<torch::Tensor>& edited) {
  require(!base.empty(), "id_loss: at least one view is required");
  require(base.size() == edited.size(), "id_loss: view counts differ");
  torch::Tensor sum;
  for (size_t i = 0; i < base.size(); ++i) {
    require(base[i].sizes() == edited[i].sizes(), "id_loss: image shapes differ");
    auto cos = torch::dot(identity.identity_embed(edited[i]), identity.identity_embed(base[i]));
    auto term = (1.0 - cos).clamp(0.0, 2.0);
    sum = sum.defined() ? sum + term : term;
  }
  return sum / static_cast<double>(base.size());
}

torch::Tensor id_loss(const IdentityEmbedder& identity, const GeneratorParams& base_params,
                      std::span<const torch::Tensor> edited_layers, const torch::Tensor& z,
                      const std::vector<CameraPose>& poses, const RenderSettings& settings) {
  require(!poses.empty(), "id_loss: at least one pose is required");
  std::vector<torch::Tensor> base, edited;
  for (const auto& pose : poses) {
    {
      torch::NoGradGuard no_grad;
      base.push_back(generate(base_params, z, pose, settings).image);
    }
    edited.push_back(substitute_forward(base_params, edited_layers, z, pose, settings).image);
  }
  return id_loss(identity, base, edited);
}

torch::Tensor irrelevant_mask(const RegionSegmenter& segmenter, const torch::Tensor& base,
                              const std::set<Region>& relevant) {
  torch::Tensor labels;
  {
    torch::NoGradGuard no_grad;
    labels = segmenter.segment(base.detach());
  }
  auto mask = torch::ones(labels.sizes(), torch::TensorOptions().dtype(torch::kBool));
  for (Region r : relevant) mask = torch::logical_and(mask, labels != static_cast<int64_t>(r));
  return mask;
}

torch::Tensor region_loss(const torch::Tensor& mask, const torch::Tensor& base_img,
                          const torch::Tensor& edited_img) {
  require(base_img.sizes() == edited_img.sizes(), "region_loss: image shapes differ");
  require(mask.dim() == 2 && mask.size(0) == base_img.size(0) && mask.size(1) == base_img.size(1),
          "region_loss: mask must be [H, W]");
  const int64_t k = mask.sum().item<int64_t>();
  if (k == 0) {
    log::debug("region_loss: every pixel is relevant, loss is 0");
    return torch::zeros({}, edited_img.options());
  }
  auto diff = (edited_img - base_img).index({mask});
  return torch::linalg_vector_norm(diff, 2) / static_cast<double>(k);
}

torch::Tensor region_loss(const RegionSegmenter& segmenter, const JointEmbedder& embedder,
                          const std::string& prompt, const torch::Tensor& base_img,
                          const torch::Tensor& edited_img) {
  auto mask = irrelevant_mask(segmenter, base_img, relevant_region_for(prompt, embedder));
  return region_loss(mask, base_img, edited_img);
}

LossBreakdown total_loss(double dir, double id, double region, const LossWeights& lambda) {
  return {dir, id, region, lambda.dir * dir + lambda.id * id + lambda.region * region};
}

torch::Tensor total_loss(const torch::Tensor& dir, const torch::Tensor& id,
                         const torch::Tensor& region, const LossWeights& lambda) {
  return lambda.dir * dir + lambda.id * id + lambda.region * region;
}

}  // namespace hyperedit
