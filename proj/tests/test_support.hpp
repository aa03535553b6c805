#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include <ATen/CPUGeneratorImpl.h>

#include "hyperedit/checkpoint.hpp"
#include "hyperedit/hyper_module.hpp"

namespace hyperedit::testing {

/// Small untrained generator for tests that only need shapes and algebra.
inline GeneratorConfig tiny_config() {
  GeneratorConfig c;
  c.width = 16;
  c.latent_dim = 16;
  c.feature_dim = 8;
  c.feature_res = 8;
  c.upscale_stages = 1;
  c.render_steps = 12;
  return c;
}

/// Path of the pretrained toy generator produced by the ctest fixture.
inline std::filesystem::path toy_checkpoint() {
  if (const char* env = std::getenv("HYPEREDIT_TOY_CKPT")) return env;
#ifdef HYPEREDIT_TOY_CKPT_DEFAULT
  return HYPEREDIT_TOY_CKPT_DEFAULT;
#else
  return "toy_generator.ckpt";
#endif
}

inline const GeneratorParams& toy_generator() {
  static const GeneratorParams params = load_generator(toy_checkpoint());
  return params;
}

/// Replaces the zero-initialized output layers with seeded noise so offsets are nonzero.
inline void randomize_outputs(HyperModule& hyper, uint64_t seed, double scale) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& item : hyper->named_parameters()) {
    if (item.key().find("_out.") != std::string::npos) {
      auto noise = torch::randn(item.value().sizes(), gen, torch::kFloat64) * scale;
      item.value().copy_(noise.to(item.value().scalar_type()));
    }
  }
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

}  // namespace hyperedit::testing
