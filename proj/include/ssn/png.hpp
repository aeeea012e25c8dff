// 8-bit RGB PNG encoding of generator output.
#pragma once

#include <cstdint>
#include <vector>

#include "ssn/tensor.hpp"

namespace ssn::png {

/// [-1, 1] -> [0, 255] linearly, round half to even, clamped.
std::uint8_t to_byte(Real v);

/// Image [3, H, W] or [1, 3, H, W] to PNG bytes.
std::vector<std::uint8_t> encode(const Tensor& image);

struct Decoded {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, interleaved
};
Decoded decode(const std::vector<std::uint8_t>& bytes);

}  // namespace ssn::png
