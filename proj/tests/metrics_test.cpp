#include <gtest/gtest.h>

#include <cmath>

#include "ssn/gradcheck.hpp"
#include "ssn/metrics.hpp"
#include "test_configs.hpp"

using namespace ssn;
using namespace ssn::metrics;
using gradcheck::random_normal;

TEST(MetricsTest, PooledFeaturesAreWindowMeans) {
  std::vector<Real> v(2 * 1 * 16 * 8);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Real>(i % 7);
  const Tensor x({2, 1, 16, 8}, v);
  const Eigen::MatrixXd f = pooled_features(x);
  ASSERT_EQ(f.rows(), 2);
  ASSERT_EQ(f.cols(), 2);
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k < 2; ++k) {
      Real s = 0.0;
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) s += v[(b * 16 + k * 8 + i) * 8 + j];
      EXPECT_NEAR(f(b, k), s / 64.0, 1e-12);
    }
}

TEST(MetricsTest, FrechetClosedForms) {
  GaussianFit a{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)};
  GaussianFit b{Eigen::Vector3d(1.0, -2.0, 0.5), Eigen::MatrixXd::Identity(3, 3)};
  EXPECT_NEAR(frechet_distance(a, b), 5.25, 1e-12);
  // Diagonal covariances: sum (sqrt(c1) - sqrt(c2))^2.
  GaussianFit c{Eigen::VectorXd::Zero(2), Eigen::Vector2d(4.0, 1.0).asDiagonal()};
  GaussianFit d{Eigen::VectorXd::Zero(2), Eigen::Vector2d(1.0, 9.0).asDiagonal()};
  EXPECT_NEAR(frechet_distance(c, d), 1.0 + 4.0, 1e-12);
}

TEST(MetricsTest, PixelFidIdentitySymmetryAndSampleCount) {
  std::mt19937_64 rng(1);
  const Tensor a = random_normal({300, 3, 16, 16}, rng);
  const Tensor b = affine(random_normal({300, 3, 16, 16}, rng), 1.5, 0.2);
  EXPECT_NEAR(pixel_fid(a, a), 0.0, 1e-8);
  EXPECT_NEAR(pixel_fid(a, b), pixel_fid(b, a), 1e-8);
  EXPECT_GT(pixel_fid(a, b), 0.0);
  EXPECT_THROW(pixel_fid(random_normal({255, 3, 16, 16}, rng), a), ContractViolation);
}

TEST(MetricsTest, SingularCovarianceGetsRidge) {
  Eigen::MatrixXd f(4, 2);
  f << 1, 1, 2, 2, 3, 3, 4, 4;  // rank one
  const GaussianFit g = fit_gaussian(f);
  EXPECT_NEAR(g.cov(0, 0), 5.0 / 3.0 + kRidge, 1e-12);
  EXPECT_NEAR(g.cov(0, 1), 5.0 / 3.0, 1e-12);
}

TEST(MetricsTest, PixelPplClosedForms) {
  std::mt19937_64 rng(2);
  const Tensor z = random_normal({5, 3, 2, 2}, rng), eta = random_normal({5, 3, 2, 2}, rng);
  const auto constant = [](const Tensor& t) { return Tensor::full({t.size(0), 3, 4, 4}, 0.25); };
  EXPECT_EQ(pixel_ppl(constant, z, eta, 1e-2), 0.0);

  const Tensor m = random_normal({2, 3, 1, 1}, rng);
  const auto linear = [&](const Tensor& t) { return conv2d(t, m); };
  Real expected = 0.0;  // mean over samples and outputs of (M eta)^2
  for (int b = 0; b < 5; ++b)
    for (int o = 0; o < 2; ++o)
      for (int p = 0; p < 4; ++p) {
        Real v = 0.0;
        for (int c = 0; c < 3; ++c) v += m.at(o * 3 + c) * eta.at((b * 3 + c) * 4 + p);
        expected += v * v;
      }
  expected /= 5 * 2 * 4;
  EXPECT_NEAR(pixel_ppl(linear, z, eta, 1e-2), expected, 1e-9 * expected);
  EXPECT_NEAR(pixel_ppl(linear, z, eta, 5e-3), expected, 1e-8 * expected);
}

TEST(MetricsTest, PixelPplRichardsonStability) {
  TrainConfig c = ssn::testing::tiny_config();
  std::mt19937_64 rng(3);
  const auto g = model::init_generator(c.generator, rng);
  const auto dec = [&](const Tensor& t) { return generate_batched(c.generator, g, t); };
  const Tensor z = model::sample_latent(c.generator, rng, 16), eta = model::sample_latent(c.generator, rng, 16);
  const Real a = pixel_ppl(dec, z, eta, 1e-2), b = pixel_ppl(dec, z, eta, 5e-3);
  EXPECT_LT(std::abs(a - b) / b, 0.05);
}

TEST(MetricsTest, DistortionDegenerateCases) {
  std::mt19937_64 rng(4);
  const Tensor z = random_normal({4, 2, 2, 2}, rng), z2 = random_normal({4, 2, 2, 2}, rng);
  const auto part = blocks::BlockPartition::grid(4, 4, 2, 2);
  const auto ignore = [](const Tensor& t) { return Tensor::full({t.size(0), 3, 4, 4}, 0.1); };
  EXPECT_EQ(resampling_distortion(ignore, z, z2, part, {0, 1, 2, 3}), 0.0);

  const Tensor w = random_normal({3, 2, 1, 1}, rng);
  const auto one_block = [&](const Tensor& t) { return upsample_nearest(conv2d(t, w), 4); };
  EXPECT_EQ(resampling_distortion_all_blocks(one_block, random_normal({3, 2, 1, 1}, rng), random_normal({3, 2, 1, 1}, rng),
                                             blocks::BlockPartition::grid(4, 4, 1, 1)),
            0.0);
  // A block-local decoder never disturbs other blocks.
  const auto local = [&](const Tensor& t) { return upsample_nearest(conv2d(t, w), 2); };
  EXPECT_EQ(resampling_distortion_all_blocks(local, z, z2, part), 0.0);
  EXPECT_THROW(resampling_distortion(local, z, z2, part, {0}), ContractViolation);
}

// Decoder that reads latent position a into image block a of `p` and leaks a
// global mean into every pixel.
TEST(MetricsTest, DistortionInvariantToBlockRelabeling) {
  std::mt19937_64 rng(5);
  const Tensor z = random_normal({3, 1, 1, 4}, rng), z2 = random_normal({3, 1, 1, 4}, rng);
  const auto make = [](const blocks::BlockPartition& p) {
    return [p](const Tensor& t) {
      const int n = t.size(0);
      std::vector<Real> out(static_cast<std::size_t>(n) * 16);
      for (int b = 0; b < n; ++b) {
        Real mean = 0.0;
        for (int a = 0; a < 4; ++a) mean += t.at(b * 4 + a) / 4.0;
        for (std::size_t a = 0; a < 4; ++a)
          for (const auto& px : p.block(a)) out[b * 16 + px.row * 4 + px.col] = std::tanh(t.at(b * 4 + a)) + 0.3 * mean;
      }
      return Tensor({n, 1, 4, 4}, out);
    };
  };
  const auto grid = blocks::BlockPartition::grid(4, 4, 2, 2);
  std::vector<std::vector<blocks::Pixel>> sets;
  for (std::size_t a : {2, 0, 3, 1}) sets.push_back(grid.block(a));
  const auto relabeled = blocks::BlockPartition::from_index_sets(4, 4, sets);
  const Real d1 = resampling_distortion_all_blocks(make(grid), z, z2, grid);
  const Real d2 = resampling_distortion_all_blocks(make(relabeled), z, z2, relabeled);
  EXPECT_GT(d1, 0.0);
  EXPECT_NEAR(d1, d2, 1e-15);
}

TEST(MetricsTest, EvaluateIsDeterministicAndFinite) {
  const TrainConfig c = ssn::testing::tiny_config();
  std::mt19937_64 rng(6);
  const auto g = model::init_generator(c.generator, rng);
  const auto data = SyntheticDataset(8, 8, c.dataset_seed);
  const auto a = evaluate(c, g, data), b = evaluate(c, g, data);
  EXPECT_TRUE(a.finite());
  EXPECT_GT(a.pixel_fid, 0.0);
  EXPECT_GT(a.pixel_ppl, 0.0);
  EXPECT_GT(a.distortion, 0.0);
  EXPECT_EQ(a.pixel_fid, b.pixel_fid);
  EXPECT_EQ(a.distortion, b.distortion);
}
