#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyperedit/checkpoint.hpp"
#include "hyperedit/generator.hpp"

namespace hyperedit {

class JointEmbedder;

/// Semantic level of an edit. Each level drives one layer group.
enum class Level { Shape, Attribute, Style };

inline constexpr std::array<Level, 3> kAllLevels{Level::Shape, Level::Attribute, Level::Style};

std::string to_string(Level level);
Level level_from_string(const std::string& s);
Group group_for(Level level);
Level level_for(Group group);

/// Text-difference embedding that steers one level.
struct DirectionFeature {
  torch::Tensor vector;  // [D]
  Level level = Level::Style;
  std::string src_text;
  std::string tgt_text;
};

/// Which editable layers (1-based indices) each group controller owns.
struct GroupAssignment {
  std::vector<int> coarse{1, 2, 3};
  std::vector<int> medium{4, 5, 6};
  std::vector<int> fine{7, 8, 9};

  static GroupAssignment from_split(int coarse, int medium, int fine);
  static GroupAssignment from_specs(const std::vector<LayerSpec>& specs);

  const std::vector<int>& members(Group g) const;
  Group group_of(int index) const;
  void validate(int n_layers) const;
  bool operator==(const GroupAssignment&) const = default;
};

/// Per-group scale on the predicted offsets. Negative values reverse an edit.
struct EditCoefficients {
  double coarse = 1.0;
  double medium = 1.0;
  double fine = 1.0;

  double for_group(Group g) const;
  void validate() const;
};

/// Relative offsets for every editable layer. Layers of unrequested levels hold exact zeros.
struct OffsetSet {
  std::vector<torch::Tensor> offsets;
  std::vector<Group> groups;  // group of each layer under the producing module's assignment
  std::vector<bool> active;   // false where the offset is the exact-zero placeholder
  std::map<Level, DirectionFeature> provenance;
};

struct HyperConfig {
  int embed_dim = 512;
  int hidden = 128;
  double gain_init = 0.1;
  double sigma = 0.05;  // direction noise, training only
  double leaky_slope = 0.2;
  uint64_t seed = 0;  // initialization of the hidden layers
};

/// One small offset predictor per editable layer: two hidden layers, a zero-initialized
/// output layer reshaped to the layer's weight shape, and a learnable gain.
class HyperModuleImpl : public torch::nn::Module {
 public:
  HyperModuleImpl(std::vector<LayerSpec> specs, GroupAssignment grouping, HyperConfig config);

  /// Raw offsets for layer position j (0-based) from a direction vector [D].
  torch::Tensor predict_layer(size_t j, const torch::Tensor& direction) const;

  const std::vector<LayerSpec>& specs() const { return specs_; }
  const GroupAssignment& grouping() const { return grouping_; }
  const HyperConfig& config() const { return config_; }

  /// Parameters of predictor j, in a fixed order (fc1.w, fc1.b, fc2.w, fc2.b, out.w, out.b, gain).
  std::vector<std::pair<std::string, torch::Tensor>> predictor_tensors(size_t j) const;

 private:
  struct Predictor {
    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, out{nullptr};
    torch::Tensor gain;
  };
  std::vector<LayerSpec> specs_;
  GroupAssignment grouping_;
  HyperConfig config_;
  std::vector<Predictor> predictors_;
};
TORCH_MODULE(HyperModule);

/// f_dir = E(tgt) - E(src).
DirectionFeature encode_direction(const std::string& src, const std::string& tgt, Level level,
                                  const JointEmbedder& embedder);

/// Adds i.i.d. N(0, sigma^2) noise drawn from a generator seeded with `seed`.
DirectionFeature perturb_direction(const DirectionFeature& f, double sigma, uint64_t seed);

/// Offsets for the requested levels; every other layer gets exact zeros.
OffsetSet predict_offsets(const HyperModule& hyper, const std::map<Level, DirectionFeature>& directions);

/// theta_j * (1 + alpha_g(j) * offset_j) for every editable layer. Pure: `theta` is untouched,
/// and layers whose coefficient is zero share theta's tensor unchanged.
GeneratorParams apply_offsets(const GeneratorParams& theta, const OffsetSet& offsets,
                              const EditCoefficients& coeffs);

/// Edited editable weights only (what substitute_forward consumes during training).
std::vector<torch::Tensor> edited_layers(const GeneratorParams& theta, const OffsetSet& offsets,
                                         const EditCoefficients& coeffs);

struct PromptPair {
  std::string src;
  std::string tgt;
  Level level = Level::Style;

  void validate() const;
  bool operator==(const PromptPair&) const = default;
};

/// encode -> perturb -> predict -> apply for any subset of levels in one call.
GeneratorParams compose_edit(const GeneratorParams& theta, const HyperModule& hyper,
                             const std::map<Level, PromptPair>& prompts,
                             const EditCoefficients& coeffs, const JointEmbedder& embedder,
                             double sigma = 0.0, uint64_t seed = 0);

Json hyper_manifest(const HyperModule& hyper);
void save_hyper(const HyperModule& hyper, const std::filesystem::path& path);
/// Loads a hyper-module and checks its layer table against the paired generator.
HyperModule load_hyper(const std::filesystem::path& path, const GeneratorParams& generator);
HyperModule hyper_from_archive(const Archive& archive, const GeneratorParams& generator);

/// Copies every parameter of `src` into a fresh module (independent storage).
HyperModule clone_hyper(const HyperModule& src);

}  // namespace hyperedit
