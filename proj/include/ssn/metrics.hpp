// Pixel-space surrogates for FID and PPL and the resampling distortion metric.
#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "ssn/blocks.hpp"
#include "ssn/config.hpp"
#include "ssn/dataset.hpp"
#include "ssn/model.hpp"

namespace ssn::metrics {

inline constexpr int kPoolWindow = 8;
inline constexpr std::size_t kMinFidSamples = 256;
inline constexpr Real kRidge = 1e-6;

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Rows are samples. Unbiased covariance; a 1e-6 ridge is added when it is singular.
GaussianFit fit_gaussian(const Eigen::MatrixXd& features);

/// ||m1 - m2||^2 + tr(C1 + C2 - 2 (C1^1/2 C2 C1^1/2)^1/2), negative eigenvalues clipped.
Real frechet_distance(const GaussianFit& a, const GaussianFit& b);

/// [N, C, H, W] -> [N, C * (H/8) * (W/8)] of 8x8 window means (whole image if smaller).
Eigen::MatrixXd pooled_features(const Tensor& images);

/// Frechet distance of pooled pixel Gaussians; both sets need >= 256 samples.
Real pixel_fid(const Tensor& real, const Tensor& fake);

using Decoder = std::function<Tensor(const Tensor&)>;

/// mean_n mean_pixels (g(z + eps eta) - g(z))^2 / eps^2.
Real pixel_ppl(const Decoder& g, const Tensor& z, const Tensor& eta, Real epsilon);

/// Mean over pairs n of the off-block MSE between g(z_n) and g(z~), where z~
/// takes block blocks[n] from z'_n. Latent block a pairs with image block a.
Real resampling_distortion(const Decoder& g, const Tensor& z, const Tensor& z_prime,
                           const blocks::BlockPartition& partition,
                           const std::vector<std::size_t>& blocks);

/// Same with every block visited for every pair.
Real resampling_distortion_all_blocks(const Decoder& g, const Tensor& z, const Tensor& z_prime,
                                      const blocks::BlockPartition& partition);

struct MetricReport {
  Real lambda_d = 0.0;
  int step = 0;
  Real pixel_fid = 0.0;
  Real pixel_ppl = 0.0;
  Real distortion = 0.0;
  Real seconds = 0.0;

  bool finite() const;
};

/// Generator evaluation with draws from cfg.eval_seed: pixel-FID against the
/// first eval_samples dataset images, pixel-PPL and distortion over eval_pairs.
MetricReport evaluate(const TrainConfig& cfg, const model::ParamStore& g, const SyntheticDataset& data);

/// Generator forward pass in chunks, without recording gradients.
Tensor generate_batched(const GeneratorConfig& cfg, const model::ParamStore& g, const Tensor& z);

}  // namespace ssn::metrics
