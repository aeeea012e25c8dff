// Lambda_D sweep: one training run per weight from the same seed, evaluated
// with the pixel-space metrics, plus (pixel-FID, distortion) trade-off points.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ssn/metrics.hpp"

namespace ssn::ablation {

inline const std::vector<double> kDefaultLambdas{0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0};

struct SweepRow {
  metrics::MetricReport report;
  /// Empty when the row is finite; otherwise why it was flagged.
  std::string flag;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // every evaluation, in run order
  /// Final evaluation of each run, sorted by lambda_d.
  std::vector<SweepRow> finals() const;
};

using SweepProgress = std::function<void(const SweepRow&)>;

/// Trains base with each lambda_d and evaluates every `eval_every` steps (0:
/// final step only). Divergence or a non-finite metric flags the row and the
/// sweep moves on.
SweepResult run_sweep(const TrainConfig& base, const std::vector<double>& lambdas, int eval_every = 0,
                      const SweepProgress& progress = {});

/// "lambda_d,step,pixel_fid,pixel_ppl,distortion,seconds" with commented metadata.
std::string to_csv(const SweepResult& result);
/// "pixel_fid,distortion" of the finite final rows, sorted by lambda_d.
std::string pareto_csv(const SweepResult& result);

struct TrendViolation {
  double lambda_low = 0.0;
  double lambda_high = 0.0;
  Real distortion_low = 0.0;
  Real distortion_high = 0.0;
};

/// Adjacent final rows whose distortion does not drop by at least
/// `min_relative_drop` (0: merely non-increasing) as lambda_d grows. Flagged
/// rows count as violations.
std::vector<TrendViolation> trend_violations(const SweepResult& result, Real min_relative_drop = 0.0);
std::string describe(const TrendViolation& v);

}  // namespace ssn::ablation
