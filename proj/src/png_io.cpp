#include "lsat/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace lsat {

ImageU8 read_png(const std::filesystem::path& path) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.string().c_str()))
    throw std::runtime_error("read_png: cannot open " + path.string() + ": " + im.message);

  // Keep grayscale sources single-channel, everything else becomes RGB.
  const bool gray = (im.format & PNG_FORMAT_FLAG_COLOR) == 0;
  im.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

  ImageU8 out;
  out.width = im.width;
  out.height = im.height;
  out.channels = gray ? 1 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&im);
    throw std::runtime_error("read_png: failed to decode " + path.string() + ": " + im.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
  if (image.channels != 1 && image.channels != 3)
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  if (static_cast<Index>(image.pixels.size()) != image.width * image.height * image.channels)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(image.width);
  im.height = static_cast<png_uint_32>(image.height);
  im.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.string().c_str(), 0, image.pixels.data(), 0, nullptr))
    throw std::runtime_error("write_png: failed to write " + path.string() + ": " + im.message);
}

Tensor<float> image_to_chw(const ImageU8& image) {
  const Index C = image.channels, H = image.height, W = image.width;
  std::vector<float> buf(static_cast<std::size_t>(C * H * W));
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x)
        buf[static_cast<std::size_t>((c * H + y) * W + x)] =
            static_cast<float>(image.pixels[static_cast<std::size_t>((y * W + x) * C + c)]) /
            255.0f;
  return Tensor<float>::from({C, H, W}, std::move(buf));
}

ImageU8 chw_to_image(const Tensor<float>& chw) {
  if (chw.rank() != 3)
    throw std::invalid_argument("chw_to_image: expected [C,H,W], got " + shape_str(chw.shape()));
  const Index C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  if (C != 1 && C != 3)
    throw std::invalid_argument("chw_to_image: channels must be 1 or 3");
  ImageU8 out;
  out.width = W;
  out.height = H;
  out.channels = C;
  out.pixels.resize(static_cast<std::size_t>(C * H * W));
  const float* p = chw.data();
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < C; ++c) {
        float v = p[(c * H + y) * W + x];
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        out.pixels[static_cast<std::size_t>((y * W + x) * C + c)] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  return out;
}

}  // namespace lsat
