#include "ssn/blocks.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace ssn::blocks {

namespace {

struct ImageView {
  int n, c, h, w;
};

ImageView view_of(const Tensor& image, const char* op) {
  if (image.dim() == 3) return {1, image.size(0), image.size(1), image.size(2)};
  if (image.dim() == 4) return {image.size(0), image.size(1), image.size(2), image.size(3)};
  throw ContractViolation(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " +
                          shape_str(image.shape()));
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::pair<int, int> parse_pair(std::string_view s, char sep) {
  const auto pos = s.find(sep);
  if (pos == std::string_view::npos) throw ContractViolation("partition: malformed pair '" + std::string(s) + "'");
  const std::string a = trim(s.substr(0, pos)), b = trim(s.substr(pos + 1));
  int x = 0, y = 0;
  auto r1 = std::from_chars(a.data(), a.data() + a.size(), x);
  auto r2 = std::from_chars(b.data(), b.data() + b.size(), y);
  if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != a.data() + a.size() ||
      r2.ptr != b.data() + b.size()) {
    throw ContractViolation("partition: malformed pair '" + std::string(s) + "'");
  }
  return {x, y};
}

}  // namespace

// ---------------------------------------------------------------------------
// BlockPartition

BlockPartition BlockPartition::grid(int height, int width, int rows, int cols) {
  if (rows <= 0 || cols <= 0) {
    throw ContractViolation("make_grid_partition: rows and cols must be positive");
  }
  if (rows > height || cols > width) {
    throw ContractViolation("make_grid_partition: more blocks than pixels along an axis");
  }
  BlockPartition p;
  p.height_ = height;
  p.width_ = width;
  p.rows_ = rows;
  p.cols_ = cols;
  const int bh = height / rows, bw = width / cols;
  for (int r = 0; r < rows; ++r) {
    const int r0 = r * bh, r1 = (r == rows - 1) ? height : r0 + bh;
    for (int c = 0; c < cols; ++c) {
      const int c0 = c * bw, c1 = (c == cols - 1) ? width : c0 + bw;
      std::vector<Pixel> block;
      for (int i = r0; i < r1; ++i)
        for (int j = c0; j < c1; ++j) block.push_back({i, j});
      p.blocks_.push_back(std::move(block));
    }
  }
  p.index();
  return p;
}

BlockPartition BlockPartition::from_index_sets(int height, int width,
                                               std::vector<std::vector<Pixel>> sets) {
  BlockPartition p;
  p.height_ = height;
  p.width_ = width;
  p.blocks_ = std::move(sets);
  for (auto& b : p.blocks_) {
    std::sort(b.begin(), b.end(), [](const Pixel& x, const Pixel& y) {
      return x.row != y.row ? x.row < y.row : x.col < y.col;
    });
  }
  p.index();
  return p;
}

void BlockPartition::index() {
  if (height_ <= 0 || width_ <= 0) throw ContractViolation("partition: empty image grid");
  constexpr std::size_t kUnowned = static_cast<std::size_t>(-1);
  owner_.assign(static_cast<std::size_t>(height_) * width_, kUnowned);
  for (std::size_t a = 0; a < blocks_.size(); ++a) {
    if (blocks_[a].empty()) throw ContractViolation("partition: empty block " + std::to_string(a));
    for (const Pixel& px : blocks_[a]) {
      if (px.row < 0 || px.row >= height_ || px.col < 0 || px.col >= width_) {
        throw ContractViolation("partition: pixel outside the image grid");
      }
      auto& slot = owner_[static_cast<std::size_t>(px.row) * width_ + px.col];
      if (slot != kUnowned) throw ContractViolation("partition: blocks are not disjoint");
      slot = a;
    }
  }
  if (std::find(owner_.begin(), owner_.end(), kUnowned) != owner_.end()) {
    throw ContractViolation("partition: blocks do not cover the image grid");
  }
}

BlockPartition BlockPartition::parse(std::string_view text, int height, int width) {
  const std::string s = trim(text);
  if (s.rfind("sets", 0) == 0) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ContractViolation("partition: missing ':' in explicit sets");
    const auto [h, w] = parse_pair(trim(std::string_view(s).substr(4, colon - 4)), 'x');
    if (h != height || w != width) throw ContractViolation("partition: extents do not match image");
    std::vector<std::vector<Pixel>> sets;
    std::stringstream body(s.substr(colon + 1));
    std::string chunk;
    while (std::getline(body, chunk, '|')) {
      std::vector<Pixel> block;
      std::stringstream pixels(chunk);
      std::string tok;
      while (pixels >> tok) {
        const auto [r, c] = parse_pair(tok, ',');
        block.push_back({r, c});
      }
      sets.push_back(std::move(block));
    }
    return from_index_sets(height, width, std::move(sets));
  }
  const auto [rows, cols] = parse_pair(s, 'x');
  return grid(height, width, rows, cols);
}

const std::vector<Pixel>& BlockPartition::block(std::size_t a) const {
  if (a >= blocks_.size()) {
    throw ContractViolation("partition: block index " + std::to_string(a) + " out of range (" +
                            std::to_string(blocks_.size()) + " blocks)");
  }
  return blocks_[a];
}

std::size_t BlockPartition::block_of(int row, int col) const {
  if (row < 0 || row >= height_ || col < 0 || col >= width_) {
    throw ContractViolation("partition: pixel outside the image grid");
  }
  return owner_[static_cast<std::size_t>(row) * width_ + col];
}

std::size_t BlockPartition::grid_index(int row, int col) const {
  if (!is_grid()) throw ContractViolation("partition: not a rectangular grid");
  if (row < 0 || row >= rows_ || col < 0 || col >= cols_) {
    throw ContractViolation("partition: block (" + std::to_string(row) + "," +
                            std::to_string(col) + ") outside " + std::to_string(rows_) + "x" +
                            std::to_string(cols_) + " grid");
  }
  return static_cast<std::size_t>(row) * cols_ + col;
}

std::string BlockPartition::to_string() const {
  if (is_grid()) return std::to_string(rows_) + "x" + std::to_string(cols_);
  std::ostringstream os;
  os << "sets " << height_ << "x" << width_ << ":";
  for (std::size_t a = 0; a < blocks_.size(); ++a) {
    if (a) os << " |";
    for (const Pixel& px : blocks_[a]) os << ' ' << px.row << ',' << px.col;
  }
  return os.str();
}

BlockPartition make_grid_partition(int n_y, int rows, int cols) {
  return BlockPartition::grid(n_y, n_y, rows, cols);
}

// ---------------------------------------------------------------------------
// Block extraction

std::vector<Real> extract_block(const Tensor& image, const BlockPartition& p, std::size_t a) {
  const ImageView v = view_of(image, "extract_block");
  if (v.n != 1 || v.h != p.height() || v.w != p.width()) {
    throw ContractViolation("extract_block: image " + shape_str(image.shape()) +
                            " does not match partition");
  }
  const auto data = image.data();
  std::vector<Real> out;
  out.reserve(p.block(a).size() * v.c);
  for (const Pixel& px : p.block(a))
    for (int ch = 0; ch < v.c; ++ch)
      out.push_back(data[(static_cast<std::size_t>(ch) * v.h + px.row) * v.w + px.col]);
  return out;
}

Tensor scatter_block(const Tensor& image, const BlockPartition& p, std::size_t a,
                     std::span<const Real> values) {
  const ImageView v = view_of(image, "scatter_block");
  const auto& block = p.block(a);
  if (v.n != 1 || v.h != p.height() || v.w != p.width() ||
      values.size() != block.size() * static_cast<std::size_t>(v.c)) {
    throw ContractViolation("scatter_block: sizes do not match partition");
  }
  auto data = image.to_vector();
  std::size_t k = 0;
  for (const Pixel& px : block)
    for (int ch = 0; ch < v.c; ++ch)
      data[(static_cast<std::size_t>(ch) * v.h + px.row) * v.w + px.col] = values[k++];
  return Tensor(image.shape(), std::move(data));
}

// ---------------------------------------------------------------------------
// LatentGrid

LatentGrid::LatentGrid(int rows, int cols, int n_z, std::vector<Real> values,
                       std::vector<std::uint64_t> seeds)
    : rows_(rows), cols_(cols), n_z_(n_z), values_(std::move(values)), seeds_(std::move(seeds)) {
  if (rows <= 0 || cols <= 0 || n_z <= 0) throw ContractViolation("LatentGrid: empty grid");
  if (values_.size() != static_cast<std::size_t>(rows) * cols * n_z) {
    throw ContractViolation("LatentGrid: value count does not match grid");
  }
  if (seeds_.empty()) seeds_.assign(block_count(), 0);
  if (seeds_.size() != block_count()) throw ContractViolation("LatentGrid: one seed per block");
}

std::vector<Real> LatentGrid::block_from_seed(int n_z, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::vector<Real> v(n_z);
  for (auto& x : v) x = normal(rng);
  return v;
}

LatentGrid LatentGrid::sample(int rows, int cols, int n_z, std::mt19937_64& rng) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(rows) * cols);
  for (auto& s : seeds) s = rng();
  return from_seeds(rows, cols, n_z, std::move(seeds));
}

LatentGrid LatentGrid::from_seeds(int rows, int cols, int n_z, std::vector<std::uint64_t> seeds) {
  LatentGrid g(rows, cols, n_z, std::vector<Real>(static_cast<std::size_t>(rows) * cols * n_z));
  if (seeds.size() != g.block_count()) throw ContractViolation("LatentGrid: one seed per block");
  for (std::size_t a = 0; a < seeds.size(); ++a) {
    g.set_block(a, block_from_seed(n_z, seeds[a]), seeds[a]);
  }
  return g;
}

std::vector<Real> LatentGrid::block(std::size_t a) const {
  if (a >= block_count()) throw ContractViolation("LatentGrid: block index out of range");
  std::vector<Real> v(n_z_);
  const std::size_t plane = static_cast<std::size_t>(rows_) * cols_;
  for (int k = 0; k < n_z_; ++k) v[k] = values_[k * plane + a];
  return v;
}

void LatentGrid::set_block(std::size_t a, std::span<const Real> v, std::uint64_t seed) {
  if (a >= block_count()) throw ContractViolation("LatentGrid: block index out of range");
  if (v.size() != static_cast<std::size_t>(n_z_)) throw ContractViolation("LatentGrid: block length");
  const std::size_t plane = static_cast<std::size_t>(rows_) * cols_;
  for (int k = 0; k < n_z_; ++k) values_[k * plane + a] = v[k];
  seeds_[a] = seed;
}

Tensor LatentGrid::to_tensor() const { return Tensor({1, n_z_, rows_, cols_}, values_); }

Tensor LatentGrid::stack(const std::vector<LatentGrid>& grids) {
  if (grids.empty()) throw ContractViolation("LatentGrid::stack: empty batch");
  const auto& g0 = grids.front();
  std::vector<Real> data;
  data.reserve(grids.size() * g0.values_.size());
  for (const auto& g : grids) {
    if (g.rows_ != g0.rows_ || g.cols_ != g0.cols_ || g.n_z_ != g0.n_z_) {
      throw ContractViolation("LatentGrid::stack: mismatched grids");
    }
    data.insert(data.end(), g.values_.begin(), g.values_.end());
  }
  return Tensor({static_cast<int>(grids.size()), g0.n_z_, g0.rows_, g0.cols_}, std::move(data));
}

bool LatentGrid::operator==(const LatentGrid& other) const {
  return rows_ == other.rows_ && cols_ == other.cols_ && n_z_ == other.n_z_ &&
         values_ == other.values_;
}

LatentGrid compose_latent(const LatentGrid& z, const LatentGrid& z_new,
                          const std::set<std::size_t>& targets) {
  if (z.rows() != z_new.rows() || z.cols() != z_new.cols() || z.n_z() != z_new.n_z()) {
    throw ContractViolation("compose_latent: latent grids differ in shape");
  }
  LatentGrid out = z;
  for (std::size_t a : targets) out.set_block(a, z_new.block(a), z_new.seeds()[a]);
  return out;
}

Tensor compose_latent(const Tensor& z, const Tensor& z_new, const std::set<std::size_t>& targets) {
  if (z.shape() != z_new.shape() || z.dim() != 4) {
    throw ContractViolation("compose_latent: latents differ in shape");
  }
  const std::size_t plane = static_cast<std::size_t>(z.size(2)) * z.size(3);
  auto out = z.to_vector();
  const auto src = z_new.data();
  for (std::size_t a : targets) {
    if (a >= plane) throw ContractViolation("compose_latent: block index out of range");
    for (std::size_t nk = 0; nk < static_cast<std::size_t>(z.size(0)) * z.size(1); ++nk) {
      out[nk * plane + a] = src[nk * plane + a];
    }
  }
  return Tensor(z.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Distortion

Tensor outside_mask(const BlockPartition& p, const std::set<std::size_t>& excluded) {
  std::vector<Real> m(static_cast<std::size_t>(p.height()) * p.width(), 1.0);
  for (std::size_t a : excluded)
    for (const Pixel& px : p.block(a)) m[static_cast<std::size_t>(px.row) * p.width() + px.col] = 0.0;
  return Tensor({1, 1, p.height(), p.width()}, std::move(m));
}

Real distortion_outside(const Tensor& y, const Tensor& y_prime, const BlockPartition& p,
                        const std::set<std::size_t>& excluded) {
  if (y.shape() != y_prime.shape()) throw ContractViolation("distortion_outside: shape mismatch");
  const ImageView v = view_of(y, "distortion_outside");
  if (v.h != p.height() || v.w != p.width()) {
    throw ContractViolation("distortion_outside: image does not match partition");
  }
  const Tensor mask = outside_mask(p, excluded);
  const auto m = mask.data();
  std::size_t count = 0;
  for (Real x : m) count += x > 0 ? 1 : 0;
  if (count == 0) return 0.0;
  const auto a = y.data(), b = y_prime.data();
  const std::size_t hw = static_cast<std::size_t>(v.h) * v.w;
  Real total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m[i % hw] > 0) {
      const Real d = a[i] - b[i];
      total += d * d;
    }
  }
  return total / static_cast<Real>(count * v.c * v.n);
}

Real distortion_outside(const Tensor& y, const Tensor& y_prime, const BlockPartition& p,
                        std::size_t excluded) {
  return distortion_outside(y, y_prime, p, std::set<std::size_t>{excluded});
}

Tensor distortion_outside(const Tensor& y, const Tensor& y_prime, const Tensor& mask) {
  Real count = 0.0;
  for (Real x : mask.data()) count += x;
  if (count == 0.0) return Tensor::scalar(0.0);
  const Real norm = 1.0 / (count * y.size(1) * y.size(0));
  return affine(sum(mul(square(sub(y, y_prime)), mask)), norm);
}

}  // namespace ssn::blocks
