#include "ssn/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace ssn::metrics {

namespace {

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

// Rows [first, first + n) of a batch tensor.
Tensor rows(const Tensor& t, int first, int n) {
  Shape shape = t.shape();
  const std::size_t per = t.numel() / static_cast<std::size_t>(shape[0]);
  shape[0] = n;
  const auto d = t.data();
  return Tensor(shape, std::vector<Real>(d.begin() + first * per, d.begin() + (first + n) * per));
}

Tensor compose_one(const Tensor& z, const Tensor& z_prime, int n, std::size_t a) {
  const int nz = z.size(1), hw = z.size(2) * z.size(3);
  std::vector<Real> v(z.data().begin() + static_cast<std::ptrdiff_t>(n) * nz * hw,
                      z.data().begin() + static_cast<std::ptrdiff_t>(n + 1) * nz * hw);
  const auto src = z_prime.data().subspan(static_cast<std::size_t>(n) * nz * hw);
  for (int c = 0; c < nz; ++c) v[c * hw + a] = src[c * hw + a];
  return Tensor({1, nz, z.size(2), z.size(3)}, std::move(v));
}

void check_pairs(const Tensor& z, const Tensor& z_prime, const blocks::BlockPartition& p) {
  if (z.dim() != 4 || z.shape() != z_prime.shape()) {
    throw ContractViolation("distortion: latents " + shape_str(z.shape()) + " and " +
                            shape_str(z_prime.shape()) + " must be equal-shaped [N, n_z, r, c]");
  }
  if (static_cast<std::size_t>(z.size(2)) * z.size(3) != p.size()) {
    throw ContractViolation("distortion: latent grid has " + std::to_string(z.size(2) * z.size(3)) +
                            " blocks, partition has " + std::to_string(p.size()));
  }
}

}  // namespace

GaussianFit fit_gaussian(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw ContractViolation("fit_gaussian: need at least two samples");
  GaussianFit fit;
  fit.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - fit.mean.transpose();
  fit.cov = centered.transpose() * centered / static_cast<Real>(features.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.cov, Eigen::EigenvaluesOnly);
  const Real top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
  if (es.eigenvalues().minCoeff() <= 1e-12 * top) {
    fit.cov += kRidge * Eigen::MatrixXd::Identity(fit.cov.rows(), fit.cov.cols());
  }
  return fit;
}

Real frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  if (a.mean.size() != b.mean.size()) throw ContractViolation("frechet_distance: dimension mismatch");
  const Eigen::MatrixXd ra = sym_sqrt(a.cov);
  const Eigen::MatrixXd inner = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const Real cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const Real d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(d, 0.0);
}

Eigen::MatrixXd pooled_features(const Tensor& images) {
  if (images.dim() != 4) throw ContractViolation("pooled_features: expected [N, C, H, W]");
  const int n = images.size(0), c = images.size(1), h = images.size(2), w = images.size(3);
  const int wh = std::min(kPoolWindow, h), ww = std::min(kPoolWindow, w);
  const int ph = h / wh, pw = w / ww;
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(n, c * ph * pw);
  const auto d = images.data();
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < ph * wh; ++i)
        for (int j = 0; j < pw * ww; ++j) {
          f(b, (ch * ph + i / wh) * pw + j / ww) +=
              d[((static_cast<std::size_t>(b) * c + ch) * h + i) * w + j];
        }
  return f / static_cast<Real>(wh * ww);
}

Real pixel_fid(const Tensor& real, const Tensor& fake) {
  if (real.dim() != 4 || static_cast<std::size_t>(real.size(0)) < kMinFidSamples ||
      fake.dim() != 4 || static_cast<std::size_t>(fake.size(0)) < kMinFidSamples) {
    throw ContractViolation("pixel_fid: need at least 256 images in each set, got " +
                            shape_str(real.shape()) + " and " + shape_str(fake.shape()));
  }
  return frechet_distance(fit_gaussian(pooled_features(real)), fit_gaussian(pooled_features(fake)));
}

Real pixel_ppl(const Decoder& g, const Tensor& z, const Tensor& eta, Real epsilon) {
  if (z.shape() != eta.shape()) throw ContractViolation("pixel_ppl: z and eta shapes differ");
  if (!(epsilon > 0.0)) throw ContractViolation("pixel_ppl: epsilon must be positive");
  const Tensor a = g(z);
  const Tensor b = g(affine(eta, epsilon) + z);
  Real s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const Real d = b.at(i) - a.at(i);
    s += d * d;
  }
  return s / static_cast<Real>(a.numel()) / (epsilon * epsilon);
}

Real resampling_distortion(const Decoder& g, const Tensor& z, const Tensor& z_prime,
                           const blocks::BlockPartition& partition,
                           const std::vector<std::size_t>& blocks) {
  check_pairs(z, z_prime, partition);
  const int n = z.size(0);
  if (blocks.size() != static_cast<std::size_t>(n)) {
    throw ContractViolation("distortion: one block per pair required");
  }
  if (n == 0) return 0.0;
  std::vector<Real> composed;
  composed.reserve(z.numel());
  for (int i = 0; i < n; ++i) {
    if (blocks[i] >= partition.size()) throw ContractViolation("distortion: block index out of range");
    const Tensor t = compose_one(z, z_prime, i, blocks[i]);
    composed.insert(composed.end(), t.data().begin(), t.data().end());
  }
  const Tensor y = g(z);
  const Tensor y_tilde = g(Tensor(z.shape(), std::move(composed)));
  Real total = 0.0;
  for (int i = 0; i < n; ++i) {
    total += blocks::distortion_outside(rows(y, i, 1), rows(y_tilde, i, 1), partition, blocks[i]);
  }
  return total / n;
}

Real resampling_distortion_all_blocks(const Decoder& g, const Tensor& z, const Tensor& z_prime,
                                      const blocks::BlockPartition& partition) {
  check_pairs(z, z_prime, partition);
  const int n = z.size(0);
  if (n == 0) return 0.0;
  const Tensor y = g(z);
  Real total = 0.0;
  for (std::size_t a = 0; a < partition.size(); ++a) {
    const Tensor y_tilde = g(blocks::compose_latent(z, z_prime, {a}));
    for (int i = 0; i < n; ++i) {
      total += blocks::distortion_outside(rows(y, i, 1), rows(y_tilde, i, 1), partition, a);
    }
  }
  return total / (static_cast<Real>(n) * partition.size());
}

bool MetricReport::finite() const {
  return std::isfinite(pixel_fid) && std::isfinite(pixel_ppl) && std::isfinite(distortion);
}

Tensor generate_batched(const GeneratorConfig& cfg, const model::ParamStore& g, const Tensor& z) {
  constexpr int kChunk = 64;
  NoGradGuard no_grad;
  const int n = z.size(0);
  std::vector<Real> out;
  Shape shape;
  for (int first = 0; first < n; first += kChunk) {
    const Tensor y = model::generate(cfg, g, rows(z, first, std::min(kChunk, n - first)));
    shape = y.shape();
    out.insert(out.end(), y.data().begin(), y.data().end());
  }
  shape[0] = n;
  return Tensor(shape, std::move(out));
}

MetricReport evaluate(const TrainConfig& cfg, const model::ParamStore& g, const SyntheticDataset& data) {
  const GeneratorConfig& gc = cfg.generator;
  const Decoder decoder = [&](const Tensor& z) { return generate_batched(gc, g, z); };
  std::mt19937_64 rng(cfg.eval_seed);
  MetricReport r;

  const Tensor z_fid = model::sample_latent(gc, rng, cfg.eval_samples);
  r.pixel_fid = pixel_fid(data.batch(0, cfg.eval_samples), decoder(z_fid));

  const Tensor z_ppl = model::sample_latent(gc, rng, cfg.ppl_samples);
  const Tensor eta = model::sample_latent(gc, rng, cfg.ppl_samples);
  r.pixel_ppl = pixel_ppl(decoder, z_ppl, eta, cfg.ppl_epsilon);

  const Tensor z = model::sample_latent(gc, rng, cfg.eval_pairs);
  const Tensor z_prime = model::sample_latent(gc, rng, cfg.eval_pairs);
  const auto partition = blocks::BlockPartition::parse(cfg.partition_spec(), gc.output_height(),
                                                       gc.output_width());
  std::uniform_int_distribution<std::size_t> pick(0, partition.size() - 1);
  std::vector<std::size_t> chosen(cfg.eval_pairs);
  for (auto& a : chosen) a = pick(rng);
  r.distortion = resampling_distortion(decoder, z, z_prime, partition, chosen);
  return r;
}

}  // namespace ssn::metrics
