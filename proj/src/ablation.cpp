#include "ssn/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "ssn/train.hpp"

namespace ssn::ablation {

namespace {

std::string num(Real v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

SweepRow flagged(double lambda, int step, Real seconds, std::string why) {
  const Real nan = std::numeric_limits<Real>::quiet_NaN();
  return {{lambda, step, nan, nan, nan, seconds}, std::move(why)};
}

}  // namespace

std::vector<SweepRow> SweepResult::finals() const {
  std::vector<SweepRow> out;
  for (const auto& row : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const SweepRow& r) { return r.report.lambda_d == row.report.lambda_d; });
    if (it == out.end()) out.push_back(row);
    else if (row.report.step >= it->report.step) *it = row;
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.report.lambda_d < b.report.lambda_d; });
  return out;
}

SweepResult run_sweep(const TrainConfig& base, const std::vector<double>& lambdas, int eval_every,
                      const SweepProgress& progress) {
  if (lambdas.empty()) throw ConfigError("ablation: empty lambda_d list");
  SweepResult result;
  const auto emit = [&](SweepRow row) {
    if (row.flag.empty() && !row.report.finite()) row.flag = "non-finite metric";
    if (progress) progress(row);
    result.rows.push_back(std::move(row));
  };
  for (double lambda : lambdas) {
    TrainConfig cfg = base;
    cfg.reg.lambda_d = lambda;
    const auto t0 = std::chrono::steady_clock::now();
    const auto seconds = [&] {
      return std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0).count();
    };
    const auto data = train::dataset_for(cfg);
    auto state = train::TrainState::init(cfg);
    const auto eval = [&] {
      metrics::MetricReport r = metrics::evaluate(cfg, state.g, data);
      r.lambda_d = lambda;
      r.step = state.step;
      r.seconds = seconds();
      emit({r, {}});
    };
    try {
      while (state.step < cfg.steps) {
        train::train_step(state, data);
        if (eval_every > 0 && state.step % eval_every == 0 && state.step < cfg.steps) eval();
      }
      eval();
    } catch (const train::TrainingDiverged& e) {
      emit(flagged(lambda, e.logs().step, seconds(), e.what()));
    }
  }
  return result;
}

std::string to_csv(const SweepResult& result) {
  std::ostringstream os;
  os << "# pixel_fid and pixel_ppl are pixel-space surrogates (pixel-FID, pixel-PPL), not Inception FID or LPIPS PPL\n"
     << "# reference distortion at full scale, not expected at toy scale: "
        "lambda_d=0 -> 0.028; lambda_d=100 -> 0.0043; lambda_d=10000 -> 0.0001\n";
  for (const auto& row : result.rows) {
    if (!row.flag.empty()) os << "# flagged lambda_d=" << num(row.report.lambda_d) << ": " << row.flag << "\n";
  }
  os << "lambda_d,step,pixel_fid,pixel_ppl,distortion,seconds\n";
  for (const auto& row : result.rows) {
    const auto& r = row.report;
    os << num(r.lambda_d) << ',' << r.step << ',' << num(r.pixel_fid) << ',' << num(r.pixel_ppl) << ','
       << num(r.distortion) << ',' << num(r.seconds) << "\n";
  }
  return os.str();
}

std::string pareto_csv(const SweepResult& result) {
  std::ostringstream os;
  os << "pixel_fid,distortion\n";
  for (const auto& row : result.finals()) {
    if (row.flag.empty()) os << num(row.report.pixel_fid) << ',' << num(row.report.distortion) << "\n";
  }
  return os.str();
}

std::vector<TrendViolation> trend_violations(const SweepResult& result, Real min_relative_drop) {
  const auto finals = result.finals();
  std::vector<TrendViolation> out;
  for (std::size_t i = 0; i + 1 < finals.size(); ++i) {
    const auto& lo = finals[i];
    const auto& hi = finals[i + 1];
    const Real dl = lo.report.distortion, dh = hi.report.distortion;
    const bool bad = !lo.flag.empty() || !hi.flag.empty() || !(dh <= dl * (1.0 - min_relative_drop));
    if (bad) out.push_back({lo.report.lambda_d, hi.report.lambda_d, dl, dh});
  }
  return out;
}

std::string describe(const TrendViolation& v) {
  return "distortion at lambda_d=" + num(v.lambda_high) + " is " + num(v.distortion_high) +
         ", at lambda_d=" + num(v.lambda_low) + " it is " + num(v.distortion_low);
}

}  // namespace ssn::ablation
