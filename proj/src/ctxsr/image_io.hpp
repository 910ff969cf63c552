#pragma once

#include <cstdint>
#include <filesystem>

#include "ctxsr/tensor.hpp"

namespace ctxsr::image_io {

// Pixel value for 8-bit level v: v/255 rounded to single precision. Every
// image written or read here lives on this grid.
double level_value(int v);
// Nearest 8-bit grid value for x ∈ [0, 1] (clipped).
double quantize8(double x);
void quantize8_inplace(Tensor& image);

// Binary P6 (maxval 255). Writes item `index` of a (B, 3, H, W) tensor.
void write_ppm(const std::filesystem::path& path, const Tensor& image, int64_t index = 0);
// Returns (1, 3, H, W). Throws FormatError naming the file on malformed input.
Tensor read_ppm(const std::filesystem::path& path);

}  // namespace ctxsr::image_io
