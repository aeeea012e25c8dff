// Block partitions of the pixel grid, latent grids with independent per-block
// vectors, latent composition and the off-block distortion functional.
#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ssn/tensor.hpp"

namespace ssn::blocks {

struct Pixel {
  int row = 0;
  int col = 0;
  bool operator==(const Pixel&) const = default;
};

/// Disjoint, covering family of pixel index sets over a height x width grid.
class BlockPartition {
 public:
  /// Row-major rectangular grid; the last block row/column absorbs any remainder.
  static BlockPartition grid(int height, int width, int rows, int cols);
  /// Arbitrary index sets; throws unless they are disjoint and cover the grid.
  static BlockPartition from_index_sets(int height, int width,
                                        std::vector<std::vector<Pixel>> sets);
  /// Parses "RxC" (grid) or "sets HxW: r,c r,c | r,c ..." (explicit).
  static BlockPartition parse(std::string_view text, int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return blocks_.size(); }
  const std::vector<Pixel>& block(std::size_t a) const;
  std::size_t block_of(int row, int col) const;

  bool is_grid() const { return rows_ > 0; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  /// Grid block at (row, col), zero-based.
  std::size_t grid_index(int row, int col) const;

  std::string to_string() const;

 private:
  BlockPartition() = default;
  void index();

  int height_ = 0;
  int width_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::vector<Pixel>> blocks_;
  std::vector<std::size_t> owner_;
};

BlockPartition make_grid_partition(int n_y, int rows, int cols);

/// Values of block `a` of an image [C,H,W] or [1,C,H,W]: pixels in row-major
/// order of the block, channels interleaved per pixel.
std::vector<Real> extract_block(const Tensor& image, const BlockPartition& p, std::size_t a);
/// Image with block `a` overwritten by `values` (layout as extract_block).
Tensor scatter_block(const Tensor& image, const BlockPartition& p, std::size_t a,
                     std::span<const Real> values);

/// Spatial latent: one n_z vector per grid position, each drawn from its own seed.
class LatentGrid {
 public:
  LatentGrid(int rows, int cols, int n_z, std::vector<Real> values,
             std::vector<std::uint64_t> seeds = {});

  /// One seed per block from `rng`, then standard normals per block.
  static LatentGrid sample(int rows, int cols, int n_z, std::mt19937_64& rng);
  static LatentGrid from_seeds(int rows, int cols, int n_z, std::vector<std::uint64_t> seeds);
  static std::vector<Real> block_from_seed(int n_z, std::uint64_t seed);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int n_z() const { return n_z_; }
  std::size_t block_count() const { return static_cast<std::size_t>(rows_) * cols_; }
  std::span<const Real> values() const { return values_; }
  const std::vector<std::uint64_t>& seeds() const { return seeds_; }

  std::vector<Real> block(std::size_t a) const;
  void set_block(std::size_t a, std::span<const Real> v, std::uint64_t seed = 0);

  /// [1, n_z, rows, cols]
  Tensor to_tensor() const;
  /// [N, n_z, rows, cols]
  static Tensor stack(const std::vector<LatentGrid>& grids);

  bool operator==(const LatentGrid& other) const;

 private:
  int rows_;
  int cols_;
  int n_z_;
  std::vector<Real> values_;  // [n_z, rows, cols]
  std::vector<std::uint64_t> seeds_;
};

/// Takes the blocks in `targets` from `z_new` and every other block from `z`.
LatentGrid compose_latent(const LatentGrid& z, const LatentGrid& z_new,
                          const std::set<std::size_t>& targets);

/// Same composition on stacked latents [N, n_z, rows, cols]; result is a constant.
Tensor compose_latent(const Tensor& z, const Tensor& z_new, const std::set<std::size_t>& targets);

/// Mean squared pixel error over every pixel (all channels) outside the union of
/// `excluded` blocks. Images are [C,H,W] or [N,C,H,W]; batches are averaged.
Real distortion_outside(const Tensor& y, const Tensor& y_prime, const BlockPartition& p,
                        const std::set<std::size_t>& excluded);
Real distortion_outside(const Tensor& y, const Tensor& y_prime, const BlockPartition& p,
                        std::size_t excluded);

/// [1,1,H,W] with 1 outside the excluded blocks, 0 inside.
Tensor outside_mask(const BlockPartition& p, const std::set<std::size_t>& excluded);

/// Differentiable per-batch mean of the off-block MSE given a mask from outside_mask.
Tensor distortion_outside(const Tensor& y, const Tensor& y_prime, const Tensor& mask);

}  // namespace ssn::blocks
