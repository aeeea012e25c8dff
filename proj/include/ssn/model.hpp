// Spatially stochastic generator and a residual-free convolutional
// discriminator, both with equalized learning rate.
//
// Generator: z [N, n_z, rows, cols] -> per-block MLP (1x1 convolutions) ->
// z_nonlin. A learned constant at the latent resolution is refined by one
// spatially modulated 3x3 convolution per resolution; each resolution's style
// is a 1x1 convolution of z_nonlin upsampled to that resolution. Every
// resolution emits RGB through a style-scaled 1x1 convolution and the RGB
// outputs are accumulated with nearest upsampling (skip architecture).
#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ssn/config.hpp"
#include "ssn/tensor.hpp"

namespace ssn::model {

/// Ordered named parameters. Order is insertion order and defines the
/// optimizer and checkpoint layout.
class ParamStore {
 public:
  void add(std::string name, Tensor value);
  const Tensor& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return values_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& values() const { return values_; }
  void set(std::size_t i, Tensor value);
  std::size_t numel() const;

  /// Fresh leaves that record gradients.
  ParamStore as_leaves() const;
  /// Constants cut from any graph.
  ParamStore detached() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

ParamStore init_generator(const GeneratorConfig& cfg, std::mt19937_64& rng);
ParamStore init_discriminator(const DiscriminatorConfig& dcfg, const GeneratorConfig& gcfg,
                              std::mt19937_64& rng);

/// Block-wise MLP as 1x1 convolutions: [N, n_z, r, c] -> [N, n_z, r, c].
Tensor map_latent(const GeneratorConfig& cfg, const ParamStore& g, const Tensor& z);

/// Image [N, C, H, W] in [-1, 1] from z_nonlin and the optional condition x [N, cond, H, W].
Tensor synthesize(const GeneratorConfig& cfg, const ParamStore& g, const Tensor& z_nonlin,
                  const std::optional<Tensor>& x = std::nullopt);

Tensor generate(const GeneratorConfig& cfg, const ParamStore& g, const Tensor& z,
                const std::optional<Tensor>& x = std::nullopt);

/// Logits [N, 1, 1, 1].
Tensor discriminate(const DiscriminatorConfig& dcfg, const ParamStore& d, const Tensor& image);

/// Standard normal latents [n, n_z, rows, cols].
Tensor sample_latent(const GeneratorConfig& cfg, std::mt19937_64& rng, int n);

void check_latent(const GeneratorConfig& cfg, const Tensor& z);

}  // namespace ssn::model
