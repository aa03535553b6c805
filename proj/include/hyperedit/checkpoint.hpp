#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hyperedit/generator.hpp"

namespace hyperedit {

using Json = nlohmann::ordered_json;

/// Single-file tensor archive:
///   line 1  "HYPEREDIT-ARCHIVE <version>"
///   line 2  manifest JSON (one line), including a "tensors" table of
///           {name, dtype, shape, offset, nbytes}
///   rest    raw little-endian tensor bytes at the recorded offsets
struct Archive {
  Json manifest;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor& at(const std::string& name) const;
};

inline constexpr int kArchiveVersion = 1;

/// Thrown when a file is not a readable archive or fails manifest validation.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_archive(const std::filesystem::path& path, Json manifest,
                   const std::vector<std::pair<std::string, torch::Tensor>>& tensors);
Archive read_archive(const std::filesystem::path& path);

std::string sha256_hex(std::string_view data);

/// Hash of the manifest's canonical one-line serialization.
std::string manifest_hash(const Json& manifest);

Json generator_manifest(const GeneratorParams& params);
GeneratorConfig config_from_manifest(const Json& manifest);

void save_generator(const GeneratorParams& params, const std::filesystem::path& path);
GeneratorParams load_generator(const std::filesystem::path& path);
/// Builds params from an already-read archive (validates shapes against the manifest).
GeneratorParams generator_from_archive(const Archive& archive);

}  // namespace hyperedit
