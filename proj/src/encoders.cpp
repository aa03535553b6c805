#include "hyperedit/encoders.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cctype>
#include <map>
#include <mutex>

namespace hyperedit {

namespace F = torch::nn::functional;

std::string to_string(Region r) {
  switch (r) {
    case Region::Skin: return "skin";
    case Region::Hair: return "hair";
    case Region::Eyes: return "eyes";
    case Region::Nose: return "nose";
    case Region::Mouth: return "mouth";
    case Region::Ears: return "ears";
    case Region::Background: return "background";
  }
  return "?";
}

void validate_image(const torch::Tensor& image, const char* who) {
  require(image.defined() && image.dim() == 3 && image.size(2) == 3 && image.size(0) > 0 &&
              image.size(1) > 0,
          std::string(who) + ": image must be [H, W, 3]");
  torch::NoGradGuard no_grad;
  require(all_finite(image), std::string(who) + ": image has non-finite pixels");
  require(image.min().item<double>() >= 0.0 && image.max().item<double>() <= 1.0,
          std::string(who) + ": pixels must lie in [0, 1]");
}

namespace {

auto f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

torch::Tensor unit(const torch::Tensor& v) { return v / v.norm(); }

uint32_t fnv1a(std::string_view s) {
  uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

/// [C*k*k] pooled pixel statistics, centered on mid-gray.
torch::Tensor pooled(const torch::Tensor& image, int k) {
  auto x = image.permute({2, 0, 1}).unsqueeze(0);
  return F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions({k, k})).reshape({-1}) - 0.5;
}

// Smooth per-channel layouts over the pooled grid: uniform and center vs. rim. Pose-dependent
// patterns (left vs. right) are left out since no single edit realizes them across views.
// Columns are unit length; rows follow the [channel, row, col] pooling order.
torch::Tensor layout_basis(int k) {
  constexpr int kPatterns = 2;
  auto basis = torch::zeros({3 * k * k, 3 * kPatterns}, f64());
  auto acc = basis.accessor<double, 2>();
  const double half = (k - 1) / 2.0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const double u = (j - half) / half, v = (i - half) / half;
        const int row = c * k * k + i * k + j;
        acc[row][c * kPatterns + 0] = 1.0;
        acc[row][c * kPatterns + 1] = 1.0 - 0.5 * (u * u + v * v);
      }
    }
  }
  return basis / basis.norm(2, 0, true);
}

}  // namespace

// --- StubJointEmbedder -----------------------------------------------------

StubJointEmbedder::StubJointEmbedder(uint64_t seed, int dim, int buckets)
    : dim_(dim), buckets_(buckets) {
  require(dim > 0 && buckets > 0, "stub embedder dims must be positive");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  // Text concepts live in the span of smooth color layouts, so every text direction names
  // an image change that an edit could actually make (overall or central color shifts).
  const auto basis = layout_basis(kPool);
  text_to_concept_ = torch::mm(basis, torch::randn({basis.size(1), buckets}, gen, f64()));
  shared_ = torch::randn({dim, kConcept}, gen, f64()) / std::sqrt(double(kConcept));
  // Keeps a flat mid-gray image away from the zero vector.
  offset_ = 1e-3 * unit(torch::randn({kConcept}, gen, f64()));
}

torch::Tensor StubJointEmbedder::embed_text(const std::string& text) const {
  require(!text.empty(), "embed_text: text must be non-empty");
  std::string s = " ";
  for (char c : text) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  s += ' ';
  auto bag = torch::zeros({buckets_}, f64());
  auto acc = bag.accessor<double, 1>();
  for (size_t i = 0; i + 3 <= s.size(); ++i) {
    acc[fnv1a(std::string_view(s).substr(i, 3)) % static_cast<uint32_t>(buckets_)] += 1.0;
  }
  return unit(torch::mv(shared_, torch::mv(text_to_concept_, bag)));
}

torch::Tensor StubJointEmbedder::embed_image(const torch::Tensor& image) const {
  validate_image(image, "embed_image");
  const auto dtype = image.scalar_type();
  auto stats = pooled(image, kPool) + offset_.to(dtype);
  return unit(torch::mv(shared_.to(dtype), stats));
}

// --- StubIdentityEmbedder --------------------------------------------------

StubIdentityEmbedder::StubIdentityEmbedder(uint64_t seed, int dim) {
  require(dim > 0, "identity embedder dim must be positive");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  projection_ = torch::randn({dim, 8 * 8 * 3}, gen, f64());
  offset_ = 1e-3 * unit(torch::randn({8 * 8 * 3}, gen, f64()));
}

torch::Tensor StubIdentityEmbedder::identity_embed(const torch::Tensor& image) const {
  validate_image(image, "identity_embed");
  const auto dtype = image.scalar_type();
  return unit(torch::mv(projection_.to(dtype), pooled(image, 8) + offset_.to(dtype)));
}

// --- StubRegionSegmenter ---------------------------------------------------

torch::Tensor StubRegionSegmenter::segment(const torch::Tensor& image) const {
  validate_image(image, "segment");
  torch::NoGradGuard no_grad;
  using torch::indexing::Slice;
  auto img = image.to(torch::kFloat64);
  const int64_t h = img.size(0);
  const int64_t w = img.size(1);
  const int64_t p = std::max<int64_t>(1, std::min(h, w) / 16);
  auto corners = torch::stack({img.index({Slice(0, p), Slice(0, p)}).reshape({-1, 3}).mean(0),
                               img.index({Slice(0, p), Slice(w - p, w)}).reshape({-1, 3}).mean(0),
                               img.index({Slice(h - p, h), Slice(0, p)}).reshape({-1, 3}).mean(0),
                               img.index({Slice(h - p, h), Slice(w - p, w)}).reshape({-1, 3}).mean(0)});
  auto bg_color = corners.mean(0);
  auto background = (img - bg_color).abs().amax(-1) < 0.08;

  // Frontal layout in scene units on the face plane.
  constexpr double kHalfExtent = 0.68;
  auto v = (torch::arange(h, f64()) + 0.5) / h;
  auto u = (torch::arange(w, f64()) + 0.5) / w;
  auto grid = torch::meshgrid({v, u}, "ij");
  auto Y = (1.0 - 2.0 * grid[0]) * kHalfExtent;
  auto X = (2.0 * grid[1] - 1.0) * kHalfExtent;

  auto labels = torch::full({h, w}, static_cast<int64_t>(Region::Skin),
                            torch::TensorOptions().dtype(torch::kInt64));
  auto put = [&](const torch::Tensor& mask, Region r) {
    labels.masked_fill_(mask, static_cast<int64_t>(r));
  };
  auto outside_head = (X / 0.47).square() + (Y / 0.60).square() > 1.0;
  put(torch::logical_and(outside_head, Y > 0.0), Region::Hair);
  put(Y > 0.38 - 0.5 * X.square(), Region::Hair);
  put(torch::logical_and(X.abs() > 0.40, Y.abs() < 0.12), Region::Ears);
  put(torch::logical_and(X.abs() < 0.08, torch::logical_and(Y > -0.15, Y < 0.05)), Region::Nose);
  put(torch::logical_and(X.abs() < 0.15, (Y + 0.26).abs() < 0.05), Region::Mouth);
  put(torch::logical_or((X - 0.16).square() + (Y - 0.08).square() < 0.0049,
                        (X + 0.16).square() + (Y - 0.08).square() < 0.0049),
      Region::Eyes);
  put(background, Region::Background);
  return labels;
}

// --- Region matching -------------------------------------------------------

namespace {

const std::vector<std::pair<Region, std::vector<std::string>>>& region_vocabulary() {
  static const std::vector<std::pair<Region, std::vector<std::string>>> vocab = {
      {Region::Skin,
       {"face", "skin", "complexion", "cheeks", "forehead", "wrinkles", "old", "young", "tan",
        "makeup", "fat", "chubby", "pale"}},
      {Region::Hair,
       {"hair", "silver hair", "blond hair", "red hair", "curly hair", "hairstyle", "bangs",
        "bald"}},
      {Region::Eyes, {"eyes", "eye", "eyebrows", "glasses", "blue eyes"}},
      {Region::Nose, {"nose", "big nose", "nostrils"}},
      {Region::Mouth, {"mouth", "lips", "smile", "teeth", "beard", "mustache", "lipstick"}},
      {Region::Ears, {"ears", "elf ears", "pointy ears", "earrings"}},
  };
  return vocab;
}

}  // namespace

std::vector<std::pair<Region, double>> region_scores(const std::string& prompt,
                                                     const JointEmbedder& embedder) {
  require(!prompt.empty(), "relevant_region_for: prompt must be non-empty");
  auto query = embedder.embed_text(prompt).to(torch::kFloat64);
  std::vector<std::pair<Region, double>> scores;
  for (const auto& [region, keywords] : region_vocabulary()) {
    double best = -2.0;
    for (const auto& k : keywords) {
      best = std::max(best, torch::dot(query, embedder.embed_text(k).to(torch::kFloat64))
                                .item<double>());
    }
    scores.emplace_back(region, best);
  }
  std::stable_sort(scores.begin(), scores.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return scores;
}

std::set<Region> relevant_region_for(const std::string& prompt, const JointEmbedder& embedder,
                                     double tie_margin) {
  const auto scores = region_scores(prompt, embedder);
  if (scores.empty()) return {Region::Skin};
  std::set<Region> out{scores[0].first};
  if (scores.size() > 1 && scores[0].second - scores[1].second < tie_margin) {
    out.insert(scores[1].first);
  }
  return out;
}

// --- Plugins ---------------------------------------------------------------

namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, EmbedderPlugin>& registry() {
  static std::map<std::string, EmbedderPlugin> r = [] {
    std::map<std::string, EmbedderPlugin> init;
    EmbedderPlugin stub;
    stub.joint = [](const nlohmann::ordered_json& s) -> std::shared_ptr<const JointEmbedder> {
      return std::make_shared<StubJointEmbedder>(s.value("seed", uint64_t{7}), s.value("dim", 512));
    };
    stub.identity = [](const nlohmann::ordered_json& s) -> std::shared_ptr<const IdentityEmbedder> {
      return std::make_shared<StubIdentityEmbedder>(s.value("seed", uint64_t{11}),
                                                    s.value("dim", 256));
    };
    stub.segmenter = [](const nlohmann::ordered_json&) -> std::shared_ptr<const RegionSegmenter> {
      return std::make_shared<StubRegionSegmenter>();
    };
    init.emplace("stub", std::move(stub));
    return init;
  }();
  return r;
}

const EmbedderPlugin& find_plugin(const std::string& impl, const std::string& slot) {
  auto& r = registry();
  auto it = r.find(impl);
  if (it == r.end()) {
    std::string names;
    for (const auto& [k, v] : r) names += (names.empty() ? "" : ", ") + k;
    throw InvalidInput("unknown embedder implementation '" + impl + "' for slot '" + slot +
                       "' (available: " + names + ")");
  }
  return it->second;
}

}  // namespace

void register_embedder_plugin(const std::string& name, EmbedderPlugin plugin) {
  std::lock_guard lock(registry_mutex());
  registry()[name] = std::move(plugin);
}

EmbedderSuite load_embedders(const nlohmann::ordered_json& section) {
  std::lock_guard lock(registry_mutex());
  auto slot = [&](const char* name) {
    nlohmann::ordered_json s = section.is_object() && section.contains(name)
                                   ? section.at(name)
                                   : nlohmann::ordered_json::object();
    require(s.is_object(), std::string("embedders.") + name + " must be an object");
    return s;
  };
  EmbedderSuite suite;
  auto joint = slot("joint");
  auto identity = slot("identity");
  auto segmenter = slot("segmenter");
  auto build = [](auto& factory, const nlohmann::ordered_json& s, const std::string& impl,
                  const std::string& name) {
    if (!factory) {
      throw InvalidInput("embedder implementation '" + impl + "' has no " + name + " factory");
    }
    return factory(s);
  };
  const auto ji = joint.value("impl", std::string("stub"));
  const auto ii = identity.value("impl", std::string("stub"));
  const auto si = segmenter.value("impl", std::string("stub"));
  suite.joint = build(find_plugin(ji, "joint").joint, joint, ji, "joint");
  suite.identity = build(find_plugin(ii, "identity").identity, identity, ii, "identity");
  suite.segmenter = build(find_plugin(si, "segmenter").segmenter, segmenter, si, "segmenter");
  return suite;
}

EmbedderSuite stub_embedders(uint64_t seed) {
  EmbedderSuite s;
  s.joint = std::make_shared<StubJointEmbedder>(seed);
  s.identity = std::make_shared<StubIdentityEmbedder>(seed + 4);
  s.segmenter = std::make_shared<StubRegionSegmenter>();
  return s;
}

}  // namespace hyperedit
