#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>

#include "stylegs/tensor.hpp"

namespace stylegs {

/// Binary mask, row-major [H,W], values 0 or 1.
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 8-bit (or 16-bit, reduced) PNG of any color type as a float [3,H,W] image in
/// [0,1]. Gray is replicated, alpha is dropped. Throws ParseError.
Tensor<float> read_png_rgb(const std::filesystem::path& path);

/// Clamps to [0,1] and rounds to 8 bits.
void write_png_rgb(const std::filesystem::path& path, const Tensor<float>& image);
std::string encode_png_rgb(const Tensor<float>& image);

/// Grayscale PNG with nonzero pixels set; values >= 128 read back as 1.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
std::string encode_mask_png(const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

/// 16-bit grayscale PNG of `values` [H,W] mapped linearly from [lo, hi] to
/// [0, 65535].
void write_png_gray16(const std::filesystem::path& path, const Tensor<float>& values, float lo, float hi);

/// Bilinear resize of an [C,H,W] image (non-differentiable convenience).
Tensor<float> resize_image(const Tensor<float>& image, Index height, Index width);

}  // namespace stylegs
