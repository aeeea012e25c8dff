// Small configurations shared by the test files.
#pragma once

#include "ssn/config.hpp"

namespace ssn::testing {

/// 2x2 latent, 8x8 images, a few hundred parameters per network.
inline TrainConfig tiny_config() {
  TrainConfig c;
  c.generator.latent_rows = 2;
  c.generator.latent_cols = 2;
  c.generator.n_z = 4;
  c.generator.mapping_depth = 2;
  c.generator.channels = {8, 8, 8};
  c.discriminator.channels = {8, 8, 8};
  c.batch_size = 4;
  c.steps = 6;
  c.eval_samples = 256;
  c.eval_pairs = 16;
  c.ppl_samples = 8;
  return c;
}

}  // namespace ssn::testing
