#include "ssn/png.hpp"

#include <png.h>

#include <cmath>
#include <stdexcept>
#include <string>

namespace ssn::png {

std::uint8_t to_byte(Real v) {
  const Real scaled = (v + 1.0) * 127.5;
  if (!(scaled > 0.0)) return 0;  // also maps NaN to 0
  if (scaled >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::nearbyint(scaled));  // default rounding mode: half to even
}

std::vector<std::uint8_t> encode(const Tensor& image) {
  const bool batched = image.dim() == 4;
  if (!(image.dim() == 3 || (batched && image.size(0) == 1)) || image.size(batched ? 1 : 0) != 3) {
    throw ContractViolation("png: expected [3, H, W] or [1, 3, H, W], got " + shape_str(image.shape()));
  }
  const int h = image.size(batched ? 2 : 1), w = image.size(batched ? 3 : 2);
  const auto d = image.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<std::uint8_t> rgb(plane * 3);
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) rgb[p * 3 + c] = to_byte(d[c * plane + p]);

  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png: ") + img.message);
  }
  out.resize(size);
  return out;
}

Decoded decode(const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw std::runtime_error(std::string("png: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Decoded out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error(std::string("png: ") + img.message);
  }
  return out;
}

}  // namespace ssn::png
