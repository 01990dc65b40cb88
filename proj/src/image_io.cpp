#include "stylegs/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "stylegs/errors.hpp"
#include "stylegs/ops.hpp"

namespace stylegs {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors by longjmp to the setjmp point of the calling function.
void png_warn(png_structp, png_const_charp) {}

void append_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}
void flush_nothing(png_structp) {}

// Encodes interleaved rows into `file`, or into `buffer` when file is null.
// 16-bit samples must already be big-endian.
void write_png(std::FILE* file, std::string* buffer, int width, int height, int color_type, int depth,
               const std::vector<std::uint8_t>& pixels) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  if (png == nullptr) throw ConfigError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  if (setjmp(png_jmpbuf(png))) throw ConfigError("PNG encoding failed");
  if (file != nullptr) {
    png_init_io(png, file);
  } else {
    png_set_write_fn(png, buffer, append_bytes, flush_nothing);
  }
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = pixels.size() / static_cast<std::size_t>(height);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::vector<std::uint8_t> rgb_bytes(const Tensor<float>& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_png", "expected [3,H,W], got " + to_string(image.shape()));
  }
  const Index h = image.dim(1), w = image.dim(2), hw = h * w;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(3 * hw));
  for (Index p = 0; p < hw; ++p) {
    for (Index c = 0; c < 3; ++c) px[static_cast<std::size_t>(3 * p + c)] = to_byte(image[c * hw + p]);
  }
  return px;
}

std::vector<std::uint8_t> mask_bytes(const Mask& mask) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(mask.size()));
  for (Index i = 0; i < mask.size(); ++i) px[static_cast<std::size_t>(i)] = mask.data()[i] ? 255 : 0;
  return px;
}

FilePtr open_for_write(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  return f;
}

// Decodes to 8-bit RGB, row-major interleaved.
std::vector<std::uint8_t> read_rgb8(const std::filesystem::path& path, int& width, int& height) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw ParseError("file", 0, "cannot open '" + path.string() + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ParseError("signature", 0, "'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  if (png == nullptr) throw ConfigError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  std::vector<std::uint8_t> px;
  if (setjmp(png_jmpbuf(png))) throw ParseError("png", 0, "corrupt PNG data in '" + path.string() + "'");
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(width) * 3) throw ParseError("IHDR", 0, "unexpected PNG layout");
  px.resize(stride * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) png_read_row(png, px.data() + static_cast<std::size_t>(y) * stride, nullptr);
  png_read_end(png, nullptr);
  return px;
}

}  // namespace

Tensor<float> read_png_rgb(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto px = read_rgb8(path, w, h);
  const Index hw = Index(w) * h;
  Tensor<float>::Array data(3 * hw);
  for (Index p = 0; p < hw; ++p) {
    for (Index c = 0; c < 3; ++c) data[c * hw + p] = static_cast<float>(px[static_cast<std::size_t>(3 * p + c)]) / 255.0f;
  }
  return Tensor<float>(Shape{3, h, w}, std::move(data));
}

void write_png_rgb(const std::filesystem::path& path, const Tensor<float>& image) {
  const auto px = rgb_bytes(image);
  auto f = open_for_write(path);
  write_png(f.get(), nullptr, static_cast<int>(image.dim(2)), static_cast<int>(image.dim(1)), PNG_COLOR_TYPE_RGB, 8, px);
}

std::string encode_png_rgb(const Tensor<float>& image) {
  const auto px = rgb_bytes(image);
  std::string out;
  write_png(nullptr, &out, static_cast<int>(image.dim(2)), static_cast<int>(image.dim(1)), PNG_COLOR_TYPE_RGB, 8, px);
  return out;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  auto f = open_for_write(path);
  write_png(f.get(), nullptr, static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), PNG_COLOR_TYPE_GRAY, 8,
            mask_bytes(mask));
}

std::string encode_mask_png(const Mask& mask) {
  std::string out;
  write_png(nullptr, &out, static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), PNG_COLOR_TYPE_GRAY, 8,
            mask_bytes(mask));
  return out;
}

Mask read_mask_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto px = read_rgb8(path, w, h);
  Mask m(h, w);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = px[static_cast<std::size_t>(3 * i)] >= 128 ? 1 : 0;
  return m;
}

void write_png_gray16(const std::filesystem::path& path, const Tensor<float>& values, float lo, float hi) {
  if (values.ndim() != 2) throw ShapeError("write_png_gray16", "expected [H,W], got " + to_string(values.shape()));
  const float range = hi > lo ? hi - lo : 1.0f;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(2 * values.size()));
  for (Index i = 0; i < values.size(); ++i) {
    const float t = std::clamp((values[i] - lo) / range, 0.0f, 1.0f);
    const auto v = static_cast<std::uint16_t>(std::lround(t * 65535.0f));
    px[static_cast<std::size_t>(2 * i)] = static_cast<std::uint8_t>(v >> 8);
    px[static_cast<std::size_t>(2 * i + 1)] = static_cast<std::uint8_t>(v & 0xFF);
  }
  auto f = open_for_write(path);
  write_png(f.get(), nullptr, static_cast<int>(values.dim(1)), static_cast<int>(values.dim(0)), PNG_COLOR_TYPE_GRAY, 16,
            px);
}

Tensor<float> resize_image(const Tensor<float>& image, Index height, Index width) {
  if (image.dim(1) == height && image.dim(2) == width) return image.clone();
  return bilinear_resize(image.clone(), height, width).clone();
}

}  // namespace stylegs
