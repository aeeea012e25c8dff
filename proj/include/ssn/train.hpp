// Alternating GAN training: D gets the logistic loss plus lazy R1, G gets the
// non-saturating loss plus lazy path length and the distortion regularizer.
#pragma once

#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssn/blocks.hpp"
#include "ssn/config.hpp"
#include "ssn/dataset.hpp"
#include "ssn/model.hpp"

namespace ssn::train {

/// Adaptive-moment optimizer state for one parameter store.
struct Adam {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::uint64_t t = 0;

  static Adam zeros_like(const model::ParamStore& p);
  /// In-place update of `params` with `grads` (same order).
  void step(model::ParamStore& params, const std::vector<Tensor>& grads, Real lr, Real beta1,
            Real beta2, Real eps);
};

struct StepLogs {
  int step = 0;
  Real d_loss = 0.0;
  Real g_loss = 0.0;
  Real r1 = 0.0;
  Real path_length = 0.0;
  Real distortion = 0.0;
  Real pl_mean = 0.0;
  bool r1_applied = false;
  bool pl_applied = false;
  bool rd_applied = false;
};

struct TrainState {
  TrainConfig config;
  model::ParamStore g;
  model::ParamStore d;
  Adam g_opt;
  Adam d_opt;
  int step = 0;
  Real pl_mean = 0.0;
  std::mt19937_64 rng;

  static TrainState init(const TrainConfig& cfg);
  blocks::BlockPartition partition() const;
};

/// Thrown when a loss or gradient is not finite; carries the offending step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, StepLogs logs)
      : std::runtime_error(what), logs_(logs) {}
  const StepLogs& logs() const { return logs_; }

 private:
  StepLogs logs_;
};

StepLogs train_step(TrainState& state, const SyntheticDataset& data);

using StepCallback = std::function<void(const TrainState&, const StepLogs&)>;

/// Runs steps until state.step == config.steps.
void train(TrainState& state, const SyntheticDataset& data, const StepCallback& on_step = {});

SyntheticDataset dataset_for(const TrainConfig& cfg);

}  // namespace ssn::train
