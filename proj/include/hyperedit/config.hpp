#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hyperedit/checkpoint.hpp"
#include "hyperedit/evaluation.hpp"
#include "hyperedit/procedural_face.hpp"
#include "hyperedit/training.hpp"

namespace hyperedit {

/// Bad or missing configuration value. `key` is the dotted path of the offending entry.
class ConfigError : public InvalidInput {
 public:
  ConfigError(std::string key, const std::string& message)
      : InvalidInput(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Reads one JSON object, tracking which keys were consumed so leftovers can be refused.
class ConfigReader {
 public:
  ConfigReader(const Json& object, std::string path);

  bool has(const std::string& key) const;
  const Json& raw(const std::string& key);

  template <typename T>
  T required(const std::string& key) {
    if (!has(key)) throw ConfigError(join(key), "missing required key");
    return convert<T>(key);
  }
  template <typename T>
  T optional(const std::string& key, T fallback) {
    return has(key) ? convert<T>(key) : fallback;
  }
  ConfigReader child(const std::string& key);
  std::string join(const std::string& key) const;

  /// Throws on the first key that was never read.
  void finish() const;

 private:
  template <typename T>
  T convert(const std::string& key) {
    used_.insert(key);
    try {
      return object_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(join(key), std::string("wrong type (") + e.what() + ")");
    }
  }
  const Json& object_;
  std::string path_;
  std::set<std::string> used_;
};

Json read_json_file(const std::filesystem::path& path);

struct StylePreset {
  std::string name;
  std::vector<PromptPair> prompts;
};

/// Whole experiment file; every section is optional except where a command needs it.
struct ExperimentConfig {
  GeneratorConfig generator;
  PretrainConfig pretrain;
  HyperConfig hyper;
  std::optional<std::array<int, 3>> hyper_split;  // overrides the generator's grouping
  TrainingConfig training;
  EvalConfig evaluation;
  std::vector<StylePreset> styles;
  Json embedders = Json::object();
  bool has_training = false;
};

ExperimentConfig parse_experiment(const Json& root);
ExperimentConfig load_experiment(const std::filesystem::path& path);

PromptPair prompt_from_json(const Json& j, const std::string& path);
Json prompt_to_json(const PromptPair& p);

}  // namespace hyperedit
