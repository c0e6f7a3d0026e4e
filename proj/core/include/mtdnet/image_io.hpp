#pragma once

#include <filesystem>

#include "mtdnet/tensor.hpp"

namespace mtdnet {

/// Binary PPM (P6, maxval 255) codec for [3,H,W] float images in [0,1].
/// Values are quantized to 8 bits on write.
void write_ppm(const Tensor& image, const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);  // throws naming the path on any defect

/// Bilinear resample to [3,h,w]; sampling at pixel centers, so a same-size
/// resize reproduces the input exactly.
Tensor resize_bilinear(const Tensor& image, int h, int w);

/// Horizontal mirror (flips the W axis). Involutive bit-for-bit.
Tensor hflip(const Tensor& image);

}  // namespace mtdnet
