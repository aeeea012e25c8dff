#include "ssn/regularizers.hpp"

#include <cmath>

namespace ssn::reg {

namespace {

void check_partition(const blocks::BlockPartition& p, const Tensor& z, const Tensor& image) {
  const std::size_t latent_blocks = static_cast<std::size_t>(z.size(2)) * z.size(3);
  if (p.size() != latent_blocks) {
    throw ContractViolation("regularizer: partition has " + std::to_string(p.size()) +
                            " blocks but the latent grid has " + std::to_string(latent_blocks));
  }
  if (p.height() != image.size(2) || p.width() != image.size(3)) {
    throw ContractViolation("regularizer: partition does not match image " + shape_str(image.shape()));
  }
}

// Per-sample norm with a floor that keeps the derivative finite at zero.
Tensor safe_norm(const Tensor& squares) { return sqrt(affine(squares, 1.0, kNormFloor)); }

}  // namespace

Tensor r1_penalty(const DiscriminatorConfig& dcfg, const model::ParamStore& d, const Tensor& real) {
  const Tensor x = real.detach().as_leaf();
  const Tensor logits = model::discriminate(dcfg, d, x);
  const Tensor gx = grad(sum(logits), {x}, true)[0];
  return affine(sum(square(gx)), 1.0 / real.size(0));
}

Tensor r_d_regularizer(const GeneratorConfig& cfg, const model::ParamStore& g, const Tensor& z,
                       const Tensor& z_prime, const blocks::BlockPartition& partition,
                       const std::vector<std::size_t>& targets, const std::optional<Tensor>& x,
                       const std::optional<Tensor>& image_z) {
  if (z.shape() != z_prime.shape()) throw ContractViolation("r_d_regularizer: z and z' differ in shape");
  const Tensor y = image_z ? *image_z : model::generate(cfg, g, z, x);
  check_partition(partition, z, y);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t a : targets) {
    if (a >= partition.size()) throw ContractViolation("r_d_regularizer: block index out of range");
    const Tensor z_tilde = blocks::compose_latent(z.detach(), z_prime.detach(), {a});
    const Tensor y_tilde = model::generate(cfg, g, z_tilde, x);
    total = add(total, blocks::distortion_outside(y, y_tilde, blocks::outside_mask(partition, {a})));
  }
  return total;
}

PathLengthResult standard_path_length(const GeneratorConfig& cfg, const model::ParamStore& g,
                                      const Tensor& z, const Tensor& probes, Real target,
                                      const std::optional<Tensor>& x) {
  const Tensor w = model::map_latent(cfg, g, z.detach()).detach().as_leaf();
  const Tensor image = model::synthesize(cfg, g, w, x);
  if (probes.shape() != image.shape()) throw ContractViolation("path length: probe shape mismatch");
  const Tensor jty = grad(sum(mul(image, probes)), {w}, true)[0];
  const Tensor norms = safe_norm(sum(square(jty), {1, 2, 3}));
  PathLengthResult r;
  r.mean_norm = mean(norms).item();
  r.penalty = mean(square(affine(norms, 1.0, -target)));
  return r;
}

Tensor spatial_path_length(const LatentToImage& g, const Tensor& z, const Tensor& probes,
                           const blocks::BlockPartition& partition, Real gamma_plus, Real gamma_minus) {
  const int rows = z.size(2), cols = z.size(3);
  if (rows * cols < 2) {
    throw ContractViolation("spatial path length: needs at least two latent blocks");
  }
  const Tensor zl = z.detach().as_leaf();
  const Tensor image = g(zl);
  if (probes.shape() != image.shape()) throw ContractViolation("spatial path length: probe shape mismatch");
  check_partition(partition, zl, image);
  const Tensor projected = mul(image, probes);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t b = 0; b < partition.size(); ++b) {
    std::vector<Real> only_b(static_cast<std::size_t>(partition.height()) * partition.width(), 0.0);
    for (const auto& px : partition.block(b)) only_b[static_cast<std::size_t>(px.row) * partition.width() + px.col] = 1.0;
    const Tensor mask({1, 1, partition.height(), partition.width()}, std::move(only_b));
    // d<g_b, y_b>/dz for every latent block a at once.
    const Tensor jb = grad(sum(mul(projected, mask)), {zl}, true)[0];
    const Tensor norms = safe_norm(sum(square(jb), {1}));  // [N, 1, rows, cols]
    std::vector<Real> gamma(static_cast<std::size_t>(rows) * cols, gamma_minus);
    gamma[b] = gamma_plus;
    const Tensor target({1, 1, rows, cols}, std::move(gamma));
    total = add(total, sum(square(sub(norms, target))));
  }
  return affine(total, 1.0 / z.size(0));
}

}  // namespace ssn::reg
