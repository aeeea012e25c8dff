// Procedural images with one global factor (background hue, which also fixes
// the shape palette) and independent per-quadrant local factors (shape kind,
// size, offset). The shared hue couples all blocks.
#pragma once

#include <cstdint>
#include <random>

#include "ssn/tensor.hpp"

namespace ssn {

class SyntheticDataset {
 public:
  static constexpr int kVersion = 1;

  SyntheticDataset(int height, int width, std::uint64_t seed);

  int height() const { return height_; }
  int width() const { return width_; }
  std::uint64_t seed() const { return seed_; }

  /// Image `index` as [3, H, W] in [-1, 1]; a pure function of (seed, index).
  Tensor sample(std::uint64_t index) const;
  /// Images first .. first + n - 1 as [n, 3, H, W].
  Tensor batch(std::uint64_t first, int n) const;
  /// n images at indices drawn from `rng`.
  Tensor random_batch(std::mt19937_64& rng, int n) const;

 private:
  void render(std::uint64_t index, Real* out) const;

  int height_;
  int width_;
  std::uint64_t seed_;
};

}  // namespace ssn
