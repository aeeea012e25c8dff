#include <gtest/gtest.h>

#include <random>

#include "ssn/blocks.hpp"
#include "ssn/gradcheck.hpp"

using namespace ssn;
using namespace ssn::blocks;

namespace {

void expect_exact_cover(const BlockPartition& p) {
  std::vector<int> hits(static_cast<std::size_t>(p.height()) * p.width(), 0);
  for (std::size_t a = 0; a < p.size(); ++a)
    for (const Pixel& px : p.block(a)) {
      ++hits[static_cast<std::size_t>(px.row) * p.width() + px.col];
      EXPECT_EQ(p.block_of(px.row, px.col), a);
    }
  for (int h : hits) EXPECT_EQ(h, 1);
}

}  // namespace

TEST(BlocksTest, GridPartitions) {
  const auto two = make_grid_partition(2, 2, 1);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two.block(0), (std::vector<Pixel>{{0, 0}, {0, 1}}));
  EXPECT_EQ(two.block(1), (std::vector<Pixel>{{1, 0}, {1, 1}}));

  const auto p4 = make_grid_partition(32, 4, 4);
  EXPECT_EQ(p4.size(), 16u);
  for (std::size_t a = 0; a < p4.size(); ++a) EXPECT_EQ(p4.block(a).size(), 64u);
  expect_exact_cover(p4);

  const auto p8 = make_grid_partition(32, 8, 8);
  EXPECT_EQ(p8.size(), 64u);
  expect_exact_cover(p8);

  const auto odd = BlockPartition::grid(10, 7, 3, 2);
  EXPECT_EQ(odd.block(0).size(), 3u * 3u);
  EXPECT_EQ(odd.block(5).size(), 4u * 4u);  // remainder absorbed by the last row/col
  expect_exact_cover(odd);

  EXPECT_THROW(make_grid_partition(8, 0, 2), ContractViolation);
}

TEST(BlocksTest, IndexSetValidationAndText) {
  EXPECT_THROW(BlockPartition::from_index_sets(1, 2, {{{0, 0}}, {{0, 0}, {0, 1}}}), ContractViolation);
  EXPECT_THROW(BlockPartition::from_index_sets(1, 2, {{{0, 0}}}), ContractViolation);
  const auto p = BlockPartition::parse("sets 2x2: 0,0 1,1 | 0,1 | 1,0", 2, 2);
  EXPECT_EQ(p.size(), 3u);
  expect_exact_cover(p);
  const auto q = BlockPartition::parse(p.to_string(), 2, 2);
  for (std::size_t a = 0; a < p.size(); ++a) EXPECT_EQ(p.block(a), q.block(a));
  EXPECT_EQ(BlockPartition::parse("4x4", 32, 32).to_string(), "4x4");
  EXPECT_THROW(BlockPartition::parse("4by4", 32, 32), ContractViolation);
}

TEST(BlocksTest, ExtractScatterRoundTrip) {
  std::mt19937_64 rng(1);
  Tensor y = gradcheck::random_normal({3, 8, 8}, rng);
  const auto whole = BlockPartition::grid(8, 8, 1, 1);
  EXPECT_EQ(extract_block(y, whole, 0).size(), y.numel());

  Tensor tiny({3, 1, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  EXPECT_EQ(extract_block(tiny, BlockPartition::grid(1, 2, 1, 2), 0), (std::vector<Real>{0.1, 0.3, 0.5}));

  const auto p = make_grid_partition(8, 4, 2);
  Tensor rebuilt = Tensor::zeros({3, 8, 8});
  for (std::size_t a = 0; a < p.size(); ++a) rebuilt = scatter_block(rebuilt, p, a, extract_block(y, p, a));
  EXPECT_EQ(rebuilt.to_vector(), y.to_vector());
  EXPECT_THROW(extract_block(y, p, p.size()), ContractViolation);
}

TEST(BlocksTest, ComposeLatent) {
  std::mt19937_64 rng(2);
  const auto z = LatentGrid::sample(4, 4, 8, rng);
  const auto z_new = LatentGrid::sample(4, 4, 8, rng);
  EXPECT_EQ(compose_latent(z, z_new, {}), z);
  std::set<std::size_t> all;
  for (std::size_t a = 0; a < 16; ++a) all.insert(a);
  EXPECT_EQ(compose_latent(z, z_new, all), z_new);

  const auto one = compose_latent(z, z_new, {5});
  for (std::size_t a = 0; a < 16; ++a) EXPECT_EQ(one.block(a), a == 5 ? z_new.block(a) : z.block(a));
  EXPECT_EQ(compose_latent(one, z_new, {5}), one);

  // Sequential single-block composition in a shuffled order reaches z_new.
  std::vector<std::size_t> order(16);
  for (std::size_t a = 0; a < 16; ++a) order[a] = a;
  std::shuffle(order.begin(), order.end(), rng);
  LatentGrid cur = z;
  for (std::size_t a : order) cur = compose_latent(cur, z_new, {a});
  EXPECT_EQ(cur, z_new);

  Tensor zt = compose_latent(LatentGrid::stack({z, z}), LatentGrid::stack({z_new, z_new}), {5});
  EXPECT_EQ(zt.to_vector(), LatentGrid::stack({one, one}).to_vector());
}

TEST(BlocksTest, LatentSeedsReproduceBlocks) {
  const auto g = LatentGrid::from_seeds(2, 2, 4, {1, 2, 3, 4});
  EXPECT_EQ(g.block(2), LatentGrid::block_from_seed(4, 3));
  EXPECT_NE(g.block(0), g.block(1));
}

TEST(BlocksTest, DistortionOutside) {
  std::mt19937_64 rng(3);
  Tensor y = gradcheck::random_normal({3, 4, 4}, rng);
  const auto p = make_grid_partition(4, 2, 2);
  EXPECT_EQ(distortion_outside(y, y, p, 0), 0.0);
  const auto inside = scatter_block(y, p, 1, std::vector<Real>(12, 9.0));
  EXPECT_EQ(distortion_outside(y, inside, p, 1), 0.0);
  EXPECT_GT(distortion_outside(y, inside, p, 0), 0.0);

  // 2x1 grayscale y = (1, 1), y' = (1, -1) with the first pixel excluded: (1 - (-1))^2.
  const auto px = BlockPartition::grid(2, 1, 2, 1);
  Tensor a({1, 2, 1}, {1.0, 1.0}), b({1, 2, 1}, {1.0, -1.0});
  EXPECT_DOUBLE_EQ(distortion_outside(a, b, px, 0), 4.0);

  Tensor d = distortion_outside(reshape(y, {1, 3, 4, 4}), reshape(inside, {1, 3, 4, 4}), outside_mask(p, {0}));
  EXPECT_NEAR(d.item(), distortion_outside(y, inside, p, 0), 1e-12);
}
