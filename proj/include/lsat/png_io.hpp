// 8-bit PNG raster IO (grayscale or RGB) and conversions to the float CHW
// layout the pipeline works in.
#pragma once

#include <filesystem>
#include <vector>

#include "lsat/tensor.hpp"

namespace lsat {

// Interleaved row-major HWC bytes.
struct ImageU8 {
  Index width = 0;
  Index height = 0;
  Index channels = 0;  // 1 or 3
  std::vector<unsigned char> pixels;
};

ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& image);

// [C,H,W] floats in [0,1].
Tensor<float> image_to_chw(const ImageU8& image);
// Clamps to [0,1] and rounds to 8 bits.
ImageU8 chw_to_image(const Tensor<float>& chw);

}  // namespace lsat
