#include "hyperedit/image_io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <cstring>
#include <fstream>

namespace hyperedit {

namespace {

void png_write_to_string(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

struct ReadCursor {
  const std::string* bytes;
  size_t offset;
};

void png_read_from_string(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + length > cur->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(data, cur->bytes->data() + cur->offset, length);
  cur->offset += length;
}

torch::Tensor to_u8(const torch::Tensor& image) {
  require(image.defined() && image.dim() == 3 && image.size(2) == 3,
          "image must be [H, W, 3]");
  if (image.scalar_type() == torch::kUInt8) return image.contiguous();
  auto v = image.detach().to(torch::kFloat64);
  require(all_finite(v), "image has non-finite pixels");
  return (v.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
}

}  // namespace

std::string encode_png(const torch::Tensor& image) {
  auto px = to_u8(image);
  const auto h = static_cast<png_uint_32>(px.size(0));
  const auto w = static_cast<png_uint_32>(px.size(1));
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_string, nullptr);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto* base = px.data_ptr<uint8_t>();
  for (png_uint_32 r = 0; r < h; ++r) png_write_row(png, base + size_t(r) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

torch::Tensor decode_png(const std::string& bytes) {
  require(bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0,
          "not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  ReadCursor cur{&bytes, 0};
  torch::Tensor out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InvalidInput("corrupt PNG stream");
  }
  png_set_read_fn(png, &cur, png_read_from_string);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const auto h = png_get_image_height(png, info);
  const auto w = png_get_image_width(png, info);
  out = torch::empty({int64_t(h), int64_t(w), 3}, torch::TensorOptions().dtype(torch::kUInt8));
  auto* base = out.data_ptr<uint8_t>();
  for (png_uint_32 r = 0; r < h; ++r) png_read_row(png, base + size_t(r) * w * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  const auto bytes = encode_png(image);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

torch::Tensor image_grid(const std::vector<std::vector<torch::Tensor>>& rows, int pad,
                         double background) {
  require(!rows.empty() && !rows.front().empty(), "image_grid: no images");
  require(pad >= 0, "image_grid: pad must be >= 0");
  const auto& first = rows.front().front();
  const int64_t h = first.size(0), w = first.size(1);
  size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const int64_t H = int64_t(rows.size()) * h + int64_t(rows.size() - 1) * pad;
  const int64_t W = int64_t(cols) * w + int64_t(cols - 1) * pad;
  auto grid = torch::full({H, W, 3}, background, torch::TensorOptions().dtype(torch::kFloat64));
  using torch::indexing::Slice;
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      const auto& img = rows[r][c];
      require(img.dim() == 3 && img.size(0) == h && img.size(1) == w && img.size(2) == 3,
              "image_grid: images must share one [H, W, 3] shape");
      const int64_t y = int64_t(r) * (h + pad), x = int64_t(c) * (w + pad);
      grid.index_put_({Slice(y, y + h), Slice(x, x + w)}, img.detach().to(torch::kFloat64));
    }
  }
  return grid;
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

}  // namespace hyperedit
