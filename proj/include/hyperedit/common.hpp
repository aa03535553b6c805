#pragma once

#include <stdexcept>
#include <string>

#include <torch/torch.h>

namespace hyperedit {

/// Raised for any precondition violation on public entry points.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidInput(message);
}

inline bool all_finite(const torch::Tensor& t) {
  return !t.defined() || t.numel() == 0 || torch::isfinite(t).all().item<bool>();
}

inline std::string shape_string(torch::IntArrayRef sizes) {
  std::string out = "[";
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(sizes[i]);
  }
  return out + "]";
}

}  // namespace hyperedit
