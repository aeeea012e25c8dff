// Model, regularizer and training settings with a flat `key = value` text form.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssn {

enum class PathLengthMode { standard, spatial };

struct GeneratorConfig {
  int latent_rows = 4;
  int latent_cols = 4;
  int n_z = 32;
  int mapping_depth = 8;
  double mapping_lr_mul = 0.01;
  /// Feature channels per resolution, starting at the latent resolution; each
  /// further entry doubles the resolution.
  std::vector<int> channels{32, 32, 32, 16};
  int image_channels = 3;
  bool conditional = false;
  int cond_channels = 3;

  int upsample_stages() const { return static_cast<int>(channels.size()) - 1; }
  int output_height() const { return latent_rows << upsample_stages(); }
  int output_width() const { return latent_cols << upsample_stages(); }
  int block_count() const { return latent_rows * latent_cols; }
  void validate() const;
};

struct DiscriminatorConfig {
  /// Channels per resolution from the image resolution downwards; each further
  /// entry halves the resolution.
  std::vector<int> channels{16, 32, 32, 32};
  void validate(const GeneratorConfig& g) const;
};

struct RegularizerSettings {
  double lambda_r1 = 1.0;
  double lambda_pl = 2.0;
  double lambda_d = 0.0;
  PathLengthMode pl_mode = PathLengthMode::standard;
  double gamma_plus = 1.0;
  double gamma_minus = 0.1;
  double pl_decay = 0.01;
  /// Path-length batch is batch_size / pl_batch_shrink.
  int pl_batch_shrink = 2;
  /// R1 and path length run every `lazy_interval` steps, scaled by it.
  int lazy_interval = 1;
  int rd_interval = 1;
  void validate() const;
};

struct TrainConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  RegularizerSettings reg;
  std::uint64_t seed = 1;
  std::uint64_t dataset_seed = 2020;
  int steps = 2000;
  int batch_size = 8;
  double lr = 2e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  /// Block partition of the image for R_D and distortion; "" means the latent grid.
  std::string partition;
  int eval_samples = 256;
  int eval_pairs = 128;
  int ppl_samples = 64;
  double ppl_epsilon = 1e-2;
  std::uint64_t eval_seed = 99;
  int log_interval = 100;
  std::string output_dir = "ssn_out";

  void validate() const;
  /// Partition text with the default resolved.
  std::string partition_spec() const;
};

/// Visits every configurable field as (key, reference) for the key/value form.
/// Field types: int, double, bool, std::uint64_t, std::string, std::vector<int>,
/// PathLengthMode.
template <class F>
void visit_fields(TrainConfig& c, F&& f) {
  f("latent_rows", c.generator.latent_rows);
  f("latent_cols", c.generator.latent_cols);
  f("n_z", c.generator.n_z);
  f("mapping_depth", c.generator.mapping_depth);
  f("mapping_lr_mul", c.generator.mapping_lr_mul);
  f("g_channels", c.generator.channels);
  f("image_channels", c.generator.image_channels);
  f("conditional", c.generator.conditional);
  f("cond_channels", c.generator.cond_channels);
  f("d_channels", c.discriminator.channels);
  f("lambda_r1", c.reg.lambda_r1);
  f("lambda_pl", c.reg.lambda_pl);
  f("lambda_d", c.reg.lambda_d);
  f("pl_mode", c.reg.pl_mode);
  f("gamma_plus", c.reg.gamma_plus);
  f("gamma_minus", c.reg.gamma_minus);
  f("pl_decay", c.reg.pl_decay);
  f("pl_batch_shrink", c.reg.pl_batch_shrink);
  f("lazy_interval", c.reg.lazy_interval);
  f("rd_interval", c.reg.rd_interval);
  f("seed", c.seed);
  f("dataset_seed", c.dataset_seed);
  f("steps", c.steps);
  f("batch_size", c.batch_size);
  f("lr", c.lr);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("adam_eps", c.adam_eps);
  f("partition", c.partition);
  f("eval_samples", c.eval_samples);
  f("eval_pairs", c.eval_pairs);
  f("ppl_samples", c.ppl_samples);
  f("ppl_epsilon", c.ppl_epsilon);
  f("eval_seed", c.eval_seed);
  f("log_interval", c.log_interval);
  f("output_dir", c.output_dir);
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sets one field from its text form; throws ConfigError on unknown keys or bad values.
void set_field(TrainConfig& c, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

/// `key = value` lines, `#` comments. Unknown keys are errors.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});
std::string to_text(const TrainConfig& c);

std::string to_string(PathLengthMode m);

}  // namespace ssn
