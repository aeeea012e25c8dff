#include "ssn/dataset.hpp"

#include <array>
#include <cmath>

namespace ssn {

namespace {

using Rgb = std::array<Real, 3>;

Rgb hsv(Real h, Real s, Real v) {
  h = h - std::floor(h);
  const Real c = v * s;
  const Real hp = h * 6.0;
  const Real x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const Real m = v - c;
  for (Real& ch : rgb) ch += m;
  return rgb;
}

enum class Figure { none, square, disc, bar };

}  // namespace

SyntheticDataset::SyntheticDataset(int height, int width, std::uint64_t seed)
    : height_(height), width_(width), seed_(seed) {
  if (height < 4 || width < 4 || height % 2 || width % 2) {
    throw ContractViolation("SyntheticDataset: extents must be even and >= 4");
  }
}

void SyntheticDataset::render(std::uint64_t index, Real* out) const {
  std::mt19937_64 rng(seed_ ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  const Real hue = u(rng);
  const Rgb background = hsv(hue, 0.55, 0.45);
  // Shape palette is tied to the background: complementary hue, two tones.
  const std::array<Rgb, 2> palette{hsv(hue + 0.5, 0.8, 0.95), hsv(hue + 0.42, 0.35, 0.85)};

  const std::size_t plane = static_cast<std::size_t>(height_) * width_;
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = background[c];

  const int qh = height_ / 2, qw = width_ / 2;
  for (int q = 0; q < 4; ++q) {
    const auto kind = static_cast<Figure>(std::uniform_int_distribution<int>(0, 3)(rng));
    const Rgb& color = palette[std::uniform_int_distribution<int>(0, 1)(rng)];
    const Real size = 0.25 + 0.35 * u(rng);  // fraction of the quadrant
    const Real cy = (q / 2) * qh + qh * (0.3 + 0.4 * u(rng));
    const Real cx = (q % 2) * qw + qw * (0.3 + 0.4 * u(rng));
    const Real r = size * qh;
    if (kind == Figure::none) continue;
    for (int i = (q / 2) * qh; i < (q / 2 + 1) * qh; ++i)
      for (int j = (q % 2) * qw; j < (q % 2 + 1) * qw; ++j) {
        const Real dy = i + 0.5 - cy, dx = j + 0.5 - cx;
        bool inside = false;
        switch (kind) {
          case Figure::square: inside = std::abs(dy) <= r && std::abs(dx) <= r; break;
          case Figure::disc: inside = dy * dy + dx * dx <= r * r; break;
          case Figure::bar: inside = std::abs(dy) <= 0.35 * r && std::abs(dx) <= 1.3 * r; break;
          case Figure::none: break;
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) out[c * plane + static_cast<std::size_t>(i) * width_ + j] = color[c];
      }
  }
  for (std::size_t k = 0; k < 3 * plane; ++k) out[k] = 2.0 * out[k] - 1.0;
}

Tensor SyntheticDataset::sample(std::uint64_t index) const {
  std::vector<Real> v(3 * static_cast<std::size_t>(height_) * width_);
  render(index, v.data());
  return Tensor({3, height_, width_}, std::move(v));
}

Tensor SyntheticDataset::batch(std::uint64_t first, int n) const {
  const std::size_t per = 3 * static_cast<std::size_t>(height_) * width_;
  std::vector<Real> v(per * n);
  for (int k = 0; k < n; ++k) render(first + k, v.data() + per * k);
  return Tensor({n, 3, height_, width_}, std::move(v));
}

Tensor SyntheticDataset::random_batch(std::mt19937_64& rng, int n) const {
  const std::size_t per = 3 * static_cast<std::size_t>(height_) * width_;
  std::vector<Real> v(per * n);
  for (int k = 0; k < n; ++k) render(rng(), v.data() + per * k);
  return Tensor({n, 3, height_, width_}, std::move(v));
}

}  // namespace ssn
