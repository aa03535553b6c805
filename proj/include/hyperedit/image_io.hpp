#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hyperedit/common.hpp"

namespace hyperedit {

/// [H, W, 3] in [0, 1] -> 8-bit RGB PNG bytes. Quantization is round(255 * v).
std::string encode_png(const torch::Tensor& image);
/// PNG bytes -> [H, W, 3] uint8.
torch::Tensor decode_png(const std::string& bytes);

void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Rows of equally sized images tiled into one image with `pad` background pixels between.
torch::Tensor image_grid(const std::vector<std::vector<torch::Tensor>>& rows, int pad = 2,
                         double background = 1.0);

std::string base64_encode(const std::string& bytes);

}  // namespace hyperedit
