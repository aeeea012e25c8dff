// R1 gradient penalty, distortion regularizer R_D and the standard and
// spatial path-length penalties. All return differentiable scalars.
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ssn/blocks.hpp"
#include "ssn/config.hpp"
#include "ssn/model.hpp"

namespace ssn::reg {

inline constexpr Real kNormFloor = 1e-20;

/// mean_n ||d D(x_n) / d x_n||^2 on real images; differentiable in the D parameters.
Tensor r1_penalty(const DiscriminatorConfig& dcfg, const model::ParamStore& d, const Tensor& real);

/// Sum over a in `targets` of the off-block distortion between g(z) and
/// g(z~a(z, z')), where z~a takes block a from z' and every other block from z.
/// `image_z` may pass a precomputed g(z) to share the forward pass.
Tensor r_d_regularizer(const GeneratorConfig& cfg, const model::ParamStore& g, const Tensor& z,
                       const Tensor& z_prime, const blocks::BlockPartition& partition,
                       const std::vector<std::size_t>& targets,
                       const std::optional<Tensor>& x = std::nullopt,
                       const std::optional<Tensor>& image_z = std::nullopt);

struct PathLengthResult {
  Tensor penalty;
  /// Batch mean of ||J^T y|| (standard mode), for the running target.
  Real mean_norm = 0.0;
};

/// mean_n (||J_n^T y_n|| - target)^2 with J the Jacobian of the image w.r.t.
/// z_nonlin; `probes` are already scaled.
PathLengthResult standard_path_length(const GeneratorConfig& cfg, const model::ParamStore& g,
                                      const Tensor& z, const Tensor& probes, Real target,
                                      const std::optional<Tensor>& x = std::nullopt);

using LatentToImage = std::function<Tensor(const Tensor&)>;

/// mean_n sum_a [(||d<g_a, y_a>/d z_a|| - gamma_plus)^2
///               + sum_{b != a} (||d<g_b, y_b>/d z_a|| - gamma_minus)^2].
/// Latent block a (grid position) corresponds to image block a of `partition`.
Tensor spatial_path_length(const LatentToImage& g, const Tensor& z, const Tensor& probes,
                           const blocks::BlockPartition& partition, Real gamma_plus, Real gamma_minus);

}  // namespace ssn::reg
