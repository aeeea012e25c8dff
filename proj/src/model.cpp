#include "ssn/model.hpp"

#include <cmath>

#include "ssn/layers.hpp"

namespace ssn::model {

namespace {

Tensor normal_tensor(const Shape& shape, std::mt19937_64& rng, Real stddev) {
  std::normal_distribution<Real> n(0.0, stddev);
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = n(rng);
  return Tensor(shape, std::move(v));
}

// Equalized learning rate: weights are stored at unit scale and rescaled at use.
Tensor eq_weight(const Tensor& w, Real lr_mul = 1.0) {
  const int fan_in = w.size(1) * w.size(2) * w.size(3);
  return affine(w, lr_mul / std::sqrt(static_cast<Real>(fan_in)));
}

Tensor add_bias(const Tensor& x, const Tensor& b, Real lr_mul = 1.0) {
  return add(x, reshape(affine(b, lr_mul), {1, b.size(0), 1, 1}));
}

Tensor dense1x1(const Tensor& x, const ParamStore& p, const std::string& prefix, Real lr_mul = 1.0) {
  return add_bias(conv2d(x, eq_weight(p[prefix + ".weight"], lr_mul)), p[prefix + ".bias"], lr_mul);
}

// Leaky ReLU with the variance-preserving gain sqrt(2).
Tensor lrelu(const Tensor& x) { return affine(leaky_relu(x), std::sqrt(2.0)); }

std::string stage(int i) { return "syn." + std::to_string(i); }

}  // namespace

void ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ContractViolation("ParamStore: duplicate parameter " + name);
  index_[name] = values_.size();
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

const Tensor& ParamStore::operator[](const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("ParamStore: no parameter " + name);
  return values_[it->second];
}

void ParamStore::set(std::size_t i, Tensor value) {
  if (value.shape() != values_.at(i).shape()) {
    throw ContractViolation("ParamStore: shape change for " + names_[i]);
  }
  values_[i] = std::move(value);
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

ParamStore ParamStore::as_leaves() const {
  ParamStore out = *this;
  for (auto& v : out.values_) v = v.as_leaf();
  return out;
}

ParamStore ParamStore::detached() const {
  ParamStore out = *this;
  for (auto& v : out.values_) v = v.detach();
  return out;
}

// ---------------------------------------------------------------------------

ParamStore init_generator(const GeneratorConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ParamStore p;
  const int nz = cfg.n_z;
  for (int i = 0; i < cfg.mapping_depth; ++i) {
    const std::string m = "map." + std::to_string(i);
    p.add(m + ".weight", normal_tensor({nz, nz, 1, 1}, rng, 1.0 / cfg.mapping_lr_mul));
    p.add(m + ".bias", Tensor::zeros({nz}));
  }
  p.add("const", normal_tensor({1, cfg.channels[0], cfg.latent_rows, cfg.latent_cols}, rng, 1.0));
  for (int i = 0; i <= cfg.upsample_stages(); ++i) {
    const int in = cfg.channels[i > 0 ? i - 1 : 0], out = cfg.channels[i];
    const std::string s = stage(i);
    p.add(s + ".style.weight", normal_tensor({in, nz, 1, 1}, rng, 1.0));
    p.add(s + ".style.bias", Tensor::ones({in}));
    if (cfg.conditional) p.add(s + ".cond.weight", normal_tensor({in, cfg.cond_channels, 1, 1}, rng, 1.0));
    p.add(s + ".conv.weight", normal_tensor({out, in, 3, 3}, rng, 1.0));
    p.add(s + ".conv.bias", Tensor::zeros({out}));
    p.add(s + ".rgb_style.weight", normal_tensor({out, nz, 1, 1}, rng, 1.0));
    p.add(s + ".rgb_style.bias", Tensor::ones({out}));
    p.add(s + ".rgb.weight", normal_tensor({cfg.image_channels, out, 1, 1}, rng, 1.0));
    p.add(s + ".rgb.bias", Tensor::zeros({cfg.image_channels}));
  }
  return p;
}

ParamStore init_discriminator(const DiscriminatorConfig& dcfg, const GeneratorConfig& gcfg,
                              std::mt19937_64& rng) {
  dcfg.validate(gcfg);
  ParamStore p;
  const auto& ch = dcfg.channels;
  p.add("d.from_rgb.weight", normal_tensor({ch[0], gcfg.image_channels, 1, 1}, rng, 1.0));
  p.add("d.from_rgb.bias", Tensor::zeros({ch[0]}));
  for (std::size_t i = 0; i + 1 < ch.size(); ++i) {
    const std::string s = "d." + std::to_string(i);
    p.add(s + ".conv.weight", normal_tensor({ch[i + 1], ch[i], 3, 3}, rng, 1.0));
    p.add(s + ".conv.bias", Tensor::zeros({ch[i + 1]}));
  }
  const int last = ch.back();
  const int stages = static_cast<int>(ch.size()) - 1;
  p.add("d.final.conv.weight", normal_tensor({last, last, 3, 3}, rng, 1.0));
  p.add("d.final.conv.bias", Tensor::zeros({last}));
  p.add("d.fc.weight",
        normal_tensor({1, last, gcfg.output_height() >> stages, gcfg.output_width() >> stages}, rng, 1.0));
  p.add("d.fc.bias", Tensor::zeros({1}));
  return p;
}

void check_latent(const GeneratorConfig& cfg, const Tensor& z) {
  if (z.dim() != 4 || z.size(1) != cfg.n_z || z.size(2) != cfg.latent_rows ||
      z.size(3) != cfg.latent_cols) {
    throw ContractViolation("generator: latent " + shape_str(z.shape()) + " does not match [N, " +
                            std::to_string(cfg.n_z) + ", " + std::to_string(cfg.latent_rows) + ", " +
                            std::to_string(cfg.latent_cols) + "]");
  }
}

Tensor map_latent(const GeneratorConfig& cfg, const ParamStore& g, const Tensor& z) {
  check_latent(cfg, z);
  Tensor h = z;
  for (int i = 0; i < cfg.mapping_depth; ++i) {
    h = lrelu(dense1x1(h, g, "map." + std::to_string(i), cfg.mapping_lr_mul));
  }
  return h;
}

Tensor synthesize(const GeneratorConfig& cfg, const ParamStore& g, const Tensor& z_nonlin,
                  const std::optional<Tensor>& x) {
  check_latent(cfg, z_nonlin);
  const int n = z_nonlin.size(0);
  if (cfg.conditional != x.has_value()) {
    throw ContractViolation(cfg.conditional ? "generator: conditioning input required"
                                            : "generator: unconditional model got a condition");
  }
  if (x && (x->dim() != 4 || x->size(0) != n || x->size(1) != cfg.cond_channels ||
            x->size(2) != cfg.output_height() || x->size(3) != cfg.output_width())) {
    throw ContractViolation("generator: condition " + shape_str(x->shape()) + " does not match the output");
  }
  const Tensor& c = g["const"];
  Tensor h = broadcast_to(c, {n, c.size(1), c.size(2), c.size(3)});
  Tensor image;
  const int stages = cfg.upsample_stages();
  for (int i = 0; i <= stages; ++i) {
    const std::string s = stage(i);
    const int f = 1 << i;
    if (i > 0) h = upsample_nearest(h);
    const Tensor zs = f > 1 ? upsample_nearest(z_nonlin, f) : z_nonlin;

    Tensor logits = dense1x1(zs, g, s + ".style");
    if (x) {
      const int down = 1 << (stages - i);
      const Tensor xs = down > 1 ? downsample_avg(*x, down) : *x;
      logits = add(logits, conv2d(xs, eq_weight(g[s + ".cond.weight"])));
    }
    const layers::SpatialStyle style{layers::positive_style(logits), {}};
    h = spatially_modulated_conv(h, style, eq_weight(g[s + ".conv.weight"]), Padding::zero);
    h = lrelu(add_bias(h, g[s + ".conv.bias"]));

    const Tensor rgb_scale = layers::positive_style(dense1x1(zs, g, s + ".rgb_style"));
    const Tensor rgb = add_bias(conv2d(mul(h, rgb_scale), eq_weight(g[s + ".rgb.weight"])), g[s + ".rgb.bias"]);
    image = i == 0 ? rgb : add(upsample_nearest(image), rgb);
  }
  return tanh(image);
}

Tensor generate(const GeneratorConfig& cfg, const ParamStore& g, const Tensor& z,
                const std::optional<Tensor>& x) {
  return synthesize(cfg, g, map_latent(cfg, g, z), x);
}

Tensor discriminate(const DiscriminatorConfig& dcfg, const ParamStore& d, const Tensor& image) {
  const int stages = static_cast<int>(dcfg.channels.size()) - 1;
  const Tensor& fc = d["d.fc.weight"];
  if (image.dim() != 4 || (image.size(2) >> stages) != fc.size(2) || (image.size(3) >> stages) != fc.size(3)) {
    throw ContractViolation("discriminator: image " + shape_str(image.shape()) + " does not match config");
  }
  Tensor h = lrelu(dense1x1(image, d, "d.from_rgb"));
  for (int i = 0; i < stages; ++i) {
    const std::string s = "d." + std::to_string(i) + ".conv";
    h = lrelu(add_bias(conv2d(h, eq_weight(d[s + ".weight"])), d[s + ".bias"]));
    h = downsample_avg(h);
  }
  h = lrelu(add_bias(conv2d(h, eq_weight(d["d.final.conv.weight"])), d["d.final.conv.bias"]));
  return add_bias(sum(mul(h, eq_weight(fc)), {1, 2, 3}), d["d.fc.bias"]);
}

Tensor sample_latent(const GeneratorConfig& cfg, std::mt19937_64& rng, int n) {
  return normal_tensor({n, cfg.n_z, cfg.latent_rows, cfg.latent_cols}, rng, 1.0);
}

}  // namespace ssn::model
