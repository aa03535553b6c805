#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyperedit/config.hpp"
#include "hyperedit/hyper_module.hpp"

namespace hyperedit {

inline constexpr int kEditSchemaVersion = 1;

/// Yaws of the default pose sweep.
inline const std::vector<double> kDefaultYaws{-0.4, -0.2, 0.0, 0.2, 0.4};

struct EditRequest {
  std::map<Level, PromptPair> prompts;
  EditCoefficients alphas;
  uint64_t seed = 0;
  std::vector<CameraPose> poses = yaw_sweep(kDefaultYaws);
  bool with_base = false;
  bool grid = true;  // also return all renders tiled into one image
  std::optional<std::string> style_preset;

  void validate() const;
};

/// Strict parse of the versioned JSON schema: unknown fields, a wrong schema_version,
/// or a missing level are rejected with InvalidInput. A "style_preset" name expands
/// to that preset's prompts.
EditRequest parse_edit_request(const Json& body, const std::vector<StylePreset>& presets);
Json edit_request_to_json(const EditRequest& request);

Json pose_to_json(const CameraPose& pose);

struct EditResult {
  std::vector<torch::Tensor> edited;  // one [H, W, 3] per pose
  std::vector<torch::Tensor> base;    // empty unless with_base
  torch::Tensor grid;                 // undefined unless grid was requested
};

/// Renders the request's pose sweep from the edited generator (and the base when asked).
/// Pure with respect to theta and the hyper-module.
EditResult run_edit(const GeneratorParams& theta, const HyperModule& hyper,
                    const JointEmbedder& embedder, const EditRequest& request);

}  // namespace hyperedit
