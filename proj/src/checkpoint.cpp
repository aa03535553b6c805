#include "hyperedit/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace hyperedit {

static_assert(std::endian::native == std::endian::little,
              "archive payloads are written in host byte order");

namespace {

constexpr std::string_view kMagic = "HYPEREDIT-ARCHIVE";

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw CheckpointError("unsupported tensor dtype for archive");
  }
}

torch::ScalarType dtype_from_name(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw CheckpointError("archive has unknown dtype '" + s + "'");
}

}  // namespace

const torch::Tensor& Archive::at(const std::string& name) const {
  for (const auto& [k, v] : tensors) {
    if (k == name) return v;
  }
  throw CheckpointError("archive is missing tensor '" + name + "'");
}

void write_archive(const std::filesystem::path& path, Json manifest,
                   const std::vector<std::pair<std::string, torch::Tensor>>& tensors) {
  Json table = Json::array();
  std::vector<torch::Tensor> payload;
  int64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    auto t = tensor.detach().contiguous();
    const int64_t nbytes = t.numel() * static_cast<int64_t>(t.element_size());
    table.push_back({{"name", name},
                     {"dtype", dtype_name(t.scalar_type())},
                     {"shape", t.sizes().vec()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
    payload.push_back(t);
  }
  manifest["tensors"] = table;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out << kMagic << ' ' << kArchiveVersion << '\n' << manifest.dump() << '\n';
  for (const auto& t : payload) {
    out.write(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
  }
  if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open archive '" + path.string() + "'");
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  hs >> magic >> version;
  if (magic != kMagic) throw CheckpointError("'" + path.string() + "' is not an archive");
  if (version != kArchiveVersion) {
    throw CheckpointError("archive version " + std::to_string(version) + " is not supported");
  }
  std::string manifest_line;
  std::getline(in, manifest_line);
  Archive archive;
  try {
    archive.manifest = Json::parse(manifest_line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("archive manifest is not valid JSON: ") + e.what());
  }
  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const int64_t payload_size = static_cast<int64_t>(in.tellg() - payload_start);

  if (!archive.manifest.contains("tensors") || !archive.manifest["tensors"].is_array()) {
    throw CheckpointError("archive manifest has no tensor table");
  }
  for (const auto& entry : archive.manifest["tensors"]) {
    const auto name = entry.at("name").get<std::string>();
    const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offset = entry.at("offset").get<int64_t>();
    const auto nbytes = entry.at("nbytes").get<int64_t>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (t.numel() * static_cast<int64_t>(t.element_size()) != nbytes || offset < 0 ||
        offset + nbytes > payload_size) {
      throw CheckpointError("tensor '" + name + "' has an inconsistent size in the manifest");
    }
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(static_cast<char*>(t.data_ptr()), nbytes);
    if (!in) throw CheckpointError("archive truncated while reading '" + name + "'");
    archive.tensors.emplace_back(name, t);
  }
  return archive;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

std::string manifest_hash(const Json& manifest) { return sha256_hex(manifest.dump()); }

Json generator_manifest(const GeneratorParams& params) {
  const auto& c = params.config;
  Json dims = {{"latent_dim", c.latent_dim},
               {"width", c.width},
               {"feature_dim", c.feature_dim},
               {"feature_res", c.feature_res},
               {"upscale_stages", c.upscale_stages},
               {"render_steps", c.render_steps},
               {"mapping_layers", c.mapping_layers},
               {"trunk_layers", c.trunk_layers},
               {"appearance_layers", c.appearance_layers},
               {"first_layer_frequency", c.first_layer_frequency},
               {"base_sphere_radius", c.base_sphere_radius},
               {"bound_radius", c.bound_radius}};
  Json groups = {{"coarse", Json::array()}, {"medium", Json::array()}, {"fine", Json::array()}};
  Json layers = Json::array();
  for (const auto& s : params.specs) {
    groups[to_string(s.group)].push_back(s.index);
    layers.push_back(
        {{"index", s.index}, {"name", s.name}, {"group", to_string(s.group)}, {"shape", s.shape}});
  }
  return {{"kind", "generator"}, {"version", 1}, {"dims", dims}, {"groups", groups},
          {"layers", layers}};
}

GeneratorConfig config_from_manifest(const Json& m) {
  try {
    const auto& d = m.at("dims");
    GeneratorConfig c;
    c.latent_dim = d.at("latent_dim");
    c.width = d.at("width");
    c.feature_dim = d.at("feature_dim");
    c.feature_res = d.at("feature_res");
    c.upscale_stages = d.at("upscale_stages");
    c.render_steps = d.at("render_steps");
    c.mapping_layers = d.at("mapping_layers");
    c.trunk_layers = d.at("trunk_layers");
    c.appearance_layers = d.at("appearance_layers");
    c.first_layer_frequency = d.at("first_layer_frequency");
    c.base_sphere_radius = d.at("base_sphere_radius");
    c.bound_radius = d.at("bound_radius");
    const auto& g = m.at("groups");
    c.group_split = {static_cast<int>(g.at("coarse").size()),
                     static_cast<int>(g.at("medium").size()),
                     static_cast<int>(g.at("fine").size())};
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("generator manifest is malformed: ") + e.what());
  } catch (const InvalidInput& e) {
    throw CheckpointError(std::string("generator manifest is invalid: ") + e.what());
  }
}

void save_generator(const GeneratorParams& params, const std::filesystem::path& path) {
  params.validate();
  write_archive(path, generator_manifest(params), params.named_tensors());
}

GeneratorParams generator_from_archive(const Archive& archive) {
  const auto& m = archive.manifest;
  if (m.value("kind", "") != "generator") throw CheckpointError("archive is not a generator");
  const GeneratorConfig config = config_from_manifest(m);

  // The group lists must be the contiguous split that the config implies.
  GeneratorParams out;
  out.config = config;
  out.specs = layer_specs(config);
  Json expected = generator_manifest(GeneratorParams{config, out.specs, {}, {}});
  if (m.at("layers") != expected.at("layers") || m.at("groups") != expected.at("groups")) {
    throw CheckpointError("generator manifest layer table disagrees with its dims");
  }

  // Reference layout: names and shapes of a fresh init.
  const GeneratorParams reference = init_generator(config, 0, torch::kFloat32);
  auto check = [&](const std::string& name, torch::IntArrayRef shape) {
    const auto& t = archive.at(name);
    if (t.sizes() != shape) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_string(t.sizes()) +
                            ", manifest expects " + shape_string(shape));
    }
    return t;
  };
  torch::ScalarType dtype = torch::kFloat32;
  for (size_t j = 0; j < out.specs.size(); ++j) {
    out.layers.push_back(check(out.specs[j].name, out.specs[j].shape));
    dtype = out.layers.back().scalar_type();
  }
  for (const auto& [name, t] : reference.frozen) out.frozen.emplace(name, check(name, t.sizes()));
  if (archive.tensors.size() != out.layers.size() + out.frozen.size()) {
    throw CheckpointError("generator archive holds unexpected extra tensors");
  }
  return out.clone(dtype);
}

GeneratorParams load_generator(const std::filesystem::path& path) {
  return generator_from_archive(read_archive(path));
}

}  // namespace hyperedit
