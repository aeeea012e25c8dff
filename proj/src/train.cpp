#include "ssn/train.hpp"

#include <cmath>
#include <sstream>

#include "ssn/regularizers.hpp"

namespace ssn::train {

namespace {

bool all_finite(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    for (Real v : t.data())
      if (!std::isfinite(v)) return false;
  return true;
}

void require_finite(bool ok, const char* what, const StepLogs& logs) {
  if (ok) return;
  std::ostringstream os;
  os << "training diverged at step " << logs.step << ": non-finite " << what << " (d_loss=" << logs.d_loss
     << ", g_loss=" << logs.g_loss << ", r1=" << logs.r1 << ", path_length=" << logs.path_length
     << ", distortion=" << logs.distortion << ")";
  throw TrainingDiverged(os.str(), logs);
}

Tensor scaled_probes(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<Real> n(0.0, 1.0 / std::sqrt(static_cast<Real>(shape[2] * shape[3])));
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = n(rng);
  return Tensor(shape, std::move(v));
}

}  // namespace

Adam Adam::zeros_like(const model::ParamStore& p) {
  Adam a;
  for (const auto& t : p.values()) {
    a.m.emplace_back(t.numel(), 0.0);
    a.v.emplace_back(t.numel(), 0.0);
  }
  return a;
}

void Adam::step(model::ParamStore& params, const std::vector<Tensor>& grads, Real lr, Real beta1,
                Real beta2, Real eps) {
  if (grads.size() != params.size() || m.size() != params.size()) {
    throw ContractViolation("Adam: gradient count does not match parameters");
  }
  ++t;
  const Real c1 = 1.0 - std::pow(beta1, static_cast<Real>(t));
  const Real c2 = 1.0 - std::pow(beta2, static_cast<Real>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::vector<Real> w = params.values()[k].to_vector();
    const auto g = grads[k].data();
    auto& mk = m[k];
    auto& vk = v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      mk[i] = beta1 * mk[i] + (1.0 - beta1) * g[i];
      vk[i] = beta2 * vk[i] + (1.0 - beta2) * g[i] * g[i];
      w[i] -= lr * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + eps);
    }
    params.set(k, Tensor(params.values()[k].shape(), std::move(w)));
  }
}

TrainState TrainState::init(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.generator.conditional) {
    throw ConfigError("train: the synthetic dataset has no conditioning input; set conditional = false");
  }
  TrainState s;
  s.config = cfg;
  s.rng.seed(cfg.seed);
  s.g = model::init_generator(cfg.generator, s.rng);
  s.d = model::init_discriminator(cfg.discriminator, cfg.generator, s.rng);
  s.g_opt = Adam::zeros_like(s.g);
  s.d_opt = Adam::zeros_like(s.d);
  s.partition();  // validates the partition text early
  return s;
}

blocks::BlockPartition TrainState::partition() const {
  return blocks::BlockPartition::parse(config.partition_spec(), config.generator.output_height(),
                                       config.generator.output_width());
}

SyntheticDataset dataset_for(const TrainConfig& cfg) {
  return SyntheticDataset(cfg.generator.output_height(), cfg.generator.output_width(), cfg.dataset_seed);
}

StepLogs train_step(TrainState& s, const SyntheticDataset& data) {
  const TrainConfig& c = s.config;
  const auto& gc = c.generator;
  const auto& dc = c.discriminator;
  const RegularizerSettings& r = c.reg;
  StepLogs logs;
  logs.step = s.step;
  GradModeGuard recording(true);

  // Discriminator.
  {
    const Tensor real = data.random_batch(s.rng, c.batch_size);
    const Tensor z = model::sample_latent(gc, s.rng, c.batch_size);
    Tensor fake;
    {
      NoGradGuard off;
      fake = model::generate(gc, s.g, z);
    }
    const model::ParamStore d = s.d.as_leaves();
    logs.r1_applied = r.lambda_r1 > 0.0 && s.step % r.lazy_interval == 0;
    const Tensor x = logs.r1_applied ? real.as_leaf() : real;
    const Tensor real_logits = model::discriminate(dc, d, x);
    Tensor loss = add(mean(softplus(model::discriminate(dc, d, fake))), mean(softplus(affine(real_logits, -1.0))));
    logs.d_loss = loss.item();
    if (logs.r1_applied) {
      const Tensor gx = grad(sum(real_logits), {x}, true)[0];
      const Tensor r1 = affine(sum(square(gx)), 1.0 / c.batch_size);
      logs.r1 = r1.item();
      loss = add(loss, affine(r1, r.lambda_r1 * r.lazy_interval));
    }
    require_finite(std::isfinite(loss.item()), "discriminator loss", logs);
    const auto grads = backward(loss, d.values());
    require_finite(all_finite(grads), "discriminator gradient", logs);
    s.d_opt.step(s.d, grads, c.lr, c.beta1, c.beta2, c.adam_eps);
  }

  // Generator.
  {
    const model::ParamStore g = s.g.as_leaves();
    const model::ParamStore d = s.d.detached();
    const Tensor z = model::sample_latent(gc, s.rng, c.batch_size);
    const Tensor fake = model::generate(gc, g, z);
    Tensor loss = mean(softplus(affine(model::discriminate(dc, d, fake), -1.0)));
    logs.g_loss = loss.item();

    logs.rd_applied = r.lambda_d > 0.0 && s.step % r.rd_interval == 0;
    if (logs.rd_applied) {
      const Tensor z_prime = model::sample_latent(gc, s.rng, c.batch_size);
      const auto a = std::uniform_int_distribution<std::size_t>(0, gc.block_count() - 1)(s.rng);
      const Tensor rd = reg::r_d_regularizer(gc, g, z, z_prime, s.partition(), {a}, std::nullopt, fake);
      logs.distortion = rd.item();
      loss = add(loss, affine(rd, r.lambda_d * r.rd_interval));
    }

    logs.pl_applied = r.lambda_pl > 0.0 && s.step % r.lazy_interval == 0;
    Real pl_norm = 0.0;
    if (logs.pl_applied) {
      const int n = c.batch_size / r.pl_batch_shrink;
      const Tensor zp = model::sample_latent(gc, s.rng, n);
      const Tensor probes =
          scaled_probes({n, gc.image_channels, gc.output_height(), gc.output_width()}, s.rng);
      Tensor pl;
      if (r.pl_mode == PathLengthMode::standard) {
        const auto res = reg::standard_path_length(gc, g, zp, probes, s.pl_mean);
        pl = res.penalty;
        pl_norm = res.mean_norm;
      } else {
        pl = reg::spatial_path_length([&](const Tensor& zz) { return model::generate(gc, g, zz); }, zp,
                                      probes, s.partition(), r.gamma_plus, r.gamma_minus);
      }
      logs.path_length = pl.item();
      loss = add(loss, affine(pl, r.lambda_pl * r.lazy_interval));
    }
    require_finite(std::isfinite(loss.item()), "generator loss", logs);
    const auto grads = backward(loss, g.values());
    require_finite(all_finite(grads), "generator gradient", logs);
    s.g_opt.step(s.g, grads, c.lr, c.beta1, c.beta2, c.adam_eps);
    if (logs.pl_applied && r.pl_mode == PathLengthMode::standard) {
      s.pl_mean += r.pl_decay * (pl_norm - s.pl_mean);
    }
  }
  logs.pl_mean = s.pl_mean;
  ++s.step;
  return logs;
}

void train(TrainState& state, const SyntheticDataset& data, const StepCallback& on_step) {
  while (state.step < state.config.steps) {
    const StepLogs logs = train_step(state, data);
    if (on_step) on_step(state, logs);
  }
}

}  // namespace ssn::train
