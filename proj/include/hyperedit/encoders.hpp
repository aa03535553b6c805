#pragma once

#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyperedit/common.hpp"

namespace hyperedit {

/// Joint text-image embedding space (the CLIP role). Outputs are unit vectors of dim().
class JointEmbedder {
 public:
  virtual ~JointEmbedder() = default;
  virtual int dim() const = 0;
  virtual torch::Tensor embed_text(const std::string& text) const = 0;
  /// image: [H, W, 3] in [0, 1]; differentiable w.r.t. pixels.
  virtual torch::Tensor embed_image(const torch::Tensor& image) const = 0;
};

/// Face identity embedding (the ArcFace role).
class IdentityEmbedder {
 public:
  virtual ~IdentityEmbedder() = default;
  virtual torch::Tensor identity_embed(const torch::Tensor& image) const = 0;
};

enum class Region : int64_t { Skin = 0, Hair, Eyes, Nose, Mouth, Ears, Background };
inline constexpr int kRegionCount = 7;

std::string to_string(Region r);

/// Face parsing (the BiSeNet role): [H, W] int64 map of Region values.
class RegionSegmenter {
 public:
  virtual ~RegionSegmenter() = default;
  virtual torch::Tensor segment(const torch::Tensor& image) const = 0;
};

/// Throws unless image is [H, W, 3], finite, and inside [0, 1].
void validate_image(const torch::Tensor& image, const char* who);

/// Deterministic stand-in for a pretrained CLIP.
///
/// Text: lower-cased character trigrams hashed into a bag, projected onto a 6-d basis of
/// per-channel color layouts (uniform, center vs. rim) in the 48-d concept space.
/// Images: 4x4 average-pooled RGB, centered, which is the full 48-d space.
/// Both then share one projection into the output space, so text and image
/// directions are comparable.
class StubJointEmbedder final : public JointEmbedder {
 public:
  explicit StubJointEmbedder(uint64_t seed = 7, int dim = 512, int buckets = 2048);
  int dim() const override { return dim_; }
  torch::Tensor embed_text(const std::string& text) const override;
  torch::Tensor embed_image(const torch::Tensor& image) const override;

  static constexpr int kPool = 4;
  static constexpr int kConcept = kPool * kPool * 3;

 private:
  int dim_;
  int buckets_;
  torch::Tensor text_to_concept_;  // [kConcept, buckets] f64
  torch::Tensor shared_;           // [dim, kConcept] f64
  torch::Tensor offset_;           // [kConcept], tiny
};

/// Deterministic identity features from 8x8 pooled pixels through a fixed projection.
class StubIdentityEmbedder final : public IdentityEmbedder {
 public:
  explicit StubIdentityEmbedder(uint64_t seed = 11, int dim = 256);
  torch::Tensor identity_embed(const torch::Tensor& image) const override;

 private:
  torch::Tensor projection_;  // [dim, 8*8*3] f64
  torch::Tensor offset_;
};

/// Template face parser: background from distance to the corner color, parts from a
/// fixed frontal face layout.
class StubRegionSegmenter final : public RegionSegmenter {
 public:
  torch::Tensor segment(const torch::Tensor& image) const override;
};

/// Labels relevant to a prompt: nearest label by best keyword cosine under the
/// embedder. When the top two labels are within `tie_margin`, both are returned.
std::set<Region> relevant_region_for(const std::string& prompt, const JointEmbedder& embedder,
                                     double tie_margin = 0.01);

/// Per-label scores used by relevant_region_for (background excluded).
std::vector<std::pair<Region, double>> region_scores(const std::string& prompt,
                                                     const JointEmbedder& embedder);

struct EmbedderSuite {
  std::shared_ptr<const JointEmbedder> joint;
  std::shared_ptr<const IdentityEmbedder> identity;
  std::shared_ptr<const RegionSegmenter> segmenter;
};

/// Factory for one embedder slot. `section` is that slot's config object
/// (carries "impl", and "seed" or "weights" as the plugin needs).
struct EmbedderPlugin {
  std::function<std::shared_ptr<const JointEmbedder>(const nlohmann::ordered_json&)> joint;
  std::function<std::shared_ptr<const IdentityEmbedder>(const nlohmann::ordered_json&)> identity;
  std::function<std::shared_ptr<const RegionSegmenter>(const nlohmann::ordered_json&)> segmenter;
};

/// Registers an implementation name. "stub" is registered by default.
void register_embedder_plugin(const std::string& name, EmbedderPlugin plugin);

/// Builds the suite from {"joint": {...}, "identity": {...}, "segmenter": {...}};
/// missing slots default to the stub.
EmbedderSuite load_embedders(const nlohmann::ordered_json& section);

EmbedderSuite stub_embedders(uint64_t seed = 7);

}  // namespace hyperedit
