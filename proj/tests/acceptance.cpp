// Acceptance gate: one PASS/FAIL line per criterion. `--only NAME` runs one.
#include <Eigen/Core>
#include <Eigen/QR>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ssn/ablation.hpp"
#include "ssn/checkpoint.hpp"
#include "ssn/gradcheck.hpp"
#include "ssn/layers.hpp"
#include "ssn/ldbr.hpp"
#include "ssn/regularizers.hpp"
#include "ssn/session.hpp"
#include "ssn/train.hpp"

using namespace ssn;
using gradcheck::random_normal;
using gradcheck::random_positive;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  Real m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = gradcheck::run_suite(7, 10);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Real worst1 = 0.0, worst2 = 0.0;
  int first = 0, second = 0;
  std::string failed;
  for (const auto& c : cases) {
    (c.second_order ? worst2 : worst1) = std::max(c.second_order ? worst2 : worst1, c.worst_error);
    ++(c.second_order ? second : first);
    if (!c.passed()) failed += " " + c.name;
  }
  const bool ok = failed.empty() && secs < 120.0;
  return {ok, std::to_string(first) + " first-order cases worst rel err " + fmt("%.2e", worst1) + " (< 1e-4), " +
                  std::to_string(second) + " double-backward cases worst " + fmt("%.2e", worst2) + " (< 1e-3), " +
                  fmt("%.1fs", secs) + " (< 120s)" + (failed.empty() ? "" : "; failed:" + failed)};
}

// Least-squares fit of one plain convolution weight to (input, output) pairs;
// returns ||W X - Y|| / ||Y||.
Real best_conv_residual(const std::vector<std::pair<Tensor, Tensor>>& pairs, int kernel, Padding pad) {
  const int c = pairs[0].first.size(1), o = pairs[0].second.size(1);
  const int ckk = c * kernel * kernel;
  // Columns of the convolution as a linear map of its weight: conv2d(h, E_j).
  std::vector<Eigen::MatrixXd> xs, ys;
  Eigen::Index cols = 0;
  for (const auto& [h, y] : pairs) cols += static_cast<Eigen::Index>(y.numel() / o);
  Eigen::MatrixXd x(ckk, cols), yy(o, cols);
  Eigen::Index at = 0;
  for (const auto& [h, y] : pairs) {
    const int n = y.size(0), hw = y.size(2) * y.size(3);
    for (int j = 0; j < ckk; ++j) {
      std::vector<Real> e(ckk, 0.0);
      e[j] = 1.0;
      const Tensor r = conv2d(h, Tensor({1, c, kernel, kernel}, e), pad);
      for (int b = 0; b < n; ++b)
        for (int p = 0; p < hw; ++p) x(j, at + b * hw + p) = r.at(static_cast<std::size_t>(b) * hw + p);
    }
    for (int b = 0; b < n; ++b)
      for (int q = 0; q < o; ++q)
        for (int p = 0; p < hw; ++p) yy(q, at + b * hw + p) = y.at((static_cast<std::size_t>(b) * o + q) * hw + p);
    at += static_cast<Eigen::Index>(n) * hw;
  }
  const Eigen::MatrixXd w = x.transpose().colPivHouseholderQr().solve(yy.transpose()).transpose();
  return (w * x - yy).norm() / yy.norm();
}

Outcome layer_algebra() {
  std::mt19937_64 rng(11);
  const Tensor h = random_normal({3, 4, 6, 6}, rng);
  const Tensor w = random_normal({3, 4, 3, 3}, rng);
  const Tensor s = random_positive({1, 4, 1, 1}, rng, 0.2, 2.0);

  const Real fold = max_abs_diff(layers::modulated_conv(h, {s, {}}, w, Padding::zero),
                                 conv2d(h, layers::fold_modulation({s, {}}, w)));

  const Tensor w1 = random_normal({3, 4, 1, 1}, rng);
  const Tensor s_map = random_positive({1, 4, 6, 6}, rng, 0.2, 2.0);
  Real smc_mc = 0.0;
  // 1x1 kernel with a spatial style whose per-channel constant part is what MC sees.
  smc_mc = std::max(smc_mc, max_abs_diff(layers::spatially_modulated_conv(h, {broadcast_to(s, {1, 4, 6, 6}), {}}, w1),
                                         layers::modulated_conv(h, {s, {}}, w1)));
  // Constant style with a 3x3 kernel: equal under periodic padding (zero padding
  // lowers the border terms of the spatially averaged expected variance).
  smc_mc = std::max(smc_mc, max_abs_diff(layers::spatially_modulated_conv(h, {broadcast_to(s, {1, 4, 6, 6}), {}}, w,
                                                                          Padding::periodic),
                                         layers::modulated_conv(h, {s, {}}, w, Padding::periodic)));

  // Non-foldability: one weight tensor for two distinct spatial styles.
  const Tensor s2 = random_positive({1, 4, 6, 6}, rng, 0.2, 2.0);
  const Tensor hb = random_normal({4, 4, 6, 6}, rng);
  const Real smc_residual = best_conv_residual(
      {{hb, layers::spatially_modulated_conv(hb, {s_map, {}}, w)}, {hb, layers::spatially_modulated_conv(hb, {s2, {}}, w)}},
      3, Padding::zero);
  // Control: the same fit recovers the folded weight of a modulated conv.
  const Real mc_residual =
      best_conv_residual({{hb, layers::modulated_conv(hb, {s, {}}, w)}}, 3, Padding::zero);

  const bool ok = fold <= 1e-10 && smc_mc <= 1e-10 && smc_residual > 1e-3 && mc_residual < 1e-8;
  return {ok, "fold identity " + fmt("%.2e", fold) + " (<= 1e-10), SMC vs MC " + fmt("%.2e", smc_mc) +
                  " (<= 1e-10), best single-conv residual for two spatial styles " + fmt("%.3e", smc_residual) +
                  " (> 1e-3), control fit for MC " + fmt("%.1e", mc_residual)};
}

Outcome sigma_e() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Fixture {
    int out, in, k, height, width;
    Padding pad;
  };
  const std::vector<Fixture> fixtures{{3, 2, 3, 4, 4, Padding::periodic},
                                      {2, 3, 3, 5, 5, Padding::zero},
                                      {4, 2, 1, 4, 4, Padding::zero},
                                      {2, 4, 3, 6, 3, Padding::periodic},
                                      {3, 3, 3, 4, 6, Padding::zero}};
  constexpr int kSamples = 20000;
  Real worst = 0.0;
  std::mt19937_64 rng(2020);
  for (const auto& f : fixtures) {
    const Tensor w = random_normal({f.out, f.in, f.k, f.k}, rng);
    const Tensor s = random_positive({1, f.in, f.height, f.width}, rng, 0.3, 2.0);
    const Tensor sigma = layers::expected_std_spatial(w, s, f.pad);
    const Tensor h = random_normal({kSamples, f.in, f.height, f.width}, rng);
    const Tensor y = conv2d(mul(s, h), w, f.pad);
    const int hw = f.height * f.width;
    for (int o = 0; o < f.out; ++o) {
      Real var = 0.0;
      for (int b = 0; b < kSamples; ++b)
        for (int p = 0; p < hw; ++p) {
          const Real v = y.at((static_cast<std::size_t>(b) * f.out + o) * hw + p);
          var += v * v;
        }
      var /= static_cast<Real>(kSamples) * hw;
      worst = std::max(worst, std::abs(std::sqrt(var) / sigma.at(o) - 1.0));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 0.02 && secs < 60.0, "5 fixtures x 20000 samples, worst relative std error " +
                                           fmt("%.4f", worst) + " (< 0.02), " + fmt("%.1fs", secs) + " (< 60s)"};
}

Outcome ldbr_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = ldbr::sequential_inpainting_counterexample();
  const auto fx = ldbr::independent_blocks_fixture();
  const auto indep = ldbr::is_block_resampling(ldbr::inpainting_family(fx.space, fx.base), fx.base);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = r.p_reach_zeros == 0.0 && r.tv_to_base == 0.5 && !r.inpainting_check.is_block_resampling &&
                  r.trivial_check.is_block_resampling && r.trivial_check.max_tv < 1e-12 &&
                  r.trivial_check.orders.size() == 2 && indep.is_block_resampling && indep.max_tv < 1e-12 &&
                  secs < 10.0;
  return {ok, "P(reach (0,0)) = " + fmt("%g", r.p_reach_zeros) + ", TV = " + fmt("%.17g", r.tv_to_base) +
                  ", trivial max TV " + fmt("%.1e", r.trivial_check.max_tv) + " over " +
                  std::to_string(r.trivial_check.orders.size()) + " orders, independent-block inpainting max TV " +
                  fmt("%.1e", indep.max_tv) + ", " + fmt("%.2fs", secs)};
}

// Perturbs every parameter so no value sits at its structured initial value.
model::ParamStore random_params(const GeneratorConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  model::ParamStore g = model::init_generator(cfg, rng);
  std::normal_distribution<Real> n(0.0, 0.3);
  for (std::size_t k = 0; k < g.size(); ++k) {
    std::vector<Real> v = g.values()[k].to_vector();
    for (Real& x : v) x += n(rng);
    g.set(k, Tensor(g.values()[k].shape(), std::move(v)));
  }
  return g;
}

Outcome resampling() {
  GeneratorConfig cfg;  // 4x4 latent, 32x32 output
  int trials = 0;
  bool ok = cfg.block_count() == 16;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const model::ParamStore g = random_params(cfg, seed);
    std::mt19937_64 rng(seed * 101);
    for (int t = 0; t < 2; ++t, ++trials) {
      const auto z = blocks::LatentGrid::sample(4, 4, cfg.n_z, rng);
      const auto fresh = blocks::LatentGrid::sample(4, 4, cfg.n_z, rng);
      std::vector<std::size_t> order(16);
      for (std::size_t a = 0; a < 16; ++a) order[a] = a;
      std::shuffle(order.begin(), order.end(), rng);
      blocks::LatentGrid cur = z;
      for (std::size_t a : order) cur = blocks::compose_latent(cur, fresh, {a});
      NoGradGuard no_grad;
      const Tensor y_seq = model::generate(cfg, g, cur.to_tensor());
      const Tensor y_fresh = model::generate(cfg, g, fresh.to_tensor());
      const bool same = cur == fresh && std::memcmp(y_seq.data().data(), y_fresh.data().data(),
                                                    y_seq.numel() * sizeof(Real)) == 0;
      ok = ok && same;
    }
  }
  return {ok, std::to_string(trials) + " random (parameters, order) trials on a 4x4 latent: sequential "
                                       "resampling of all 16 blocks " +
                  (ok ? "bit-identical" : "DIFFERS") + " to generation from the fresh latent"};
}

TrainConfig ablation_config() {
  TrainConfig c;
  c.generator.channels = {32, 32, 32};  // 4x4 latent -> 16x16 images
  c.discriminator.channels = {16, 32, 32};
  c.reg.lazy_interval = 4;
  c.steps = 2000;
  c.eval_pairs = 512;
  return c;
}

Outcome ablation_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = ablation::run_sweep(ablation_config(), {0.0, 10.0, 100.0}, 0, [](const ablation::SweepRow& r) {
    std::printf("  lambda_d %-5g step %d pixel-FID %.5f pixel-PPL %.5f distortion %.6f %.0fs%s\n",
                r.report.lambda_d, r.report.step, r.report.pixel_fid, r.report.pixel_ppl, r.report.distortion,
                r.report.seconds, r.flag.empty() ? "" : (" FLAGGED " + r.flag).c_str());
    std::fflush(stdout);
  });
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const auto finals = result.finals();
  const auto violations = ablation::trend_violations(result, 0.2);
  bool ok = finals.size() == 3 && violations.empty() && minutes < 45.0;
  std::string detail;
  if (finals.size() == 3) {
    const Real ratio = finals[2].report.pixel_fid / finals[0].report.pixel_fid;
    ok = ok && ratio <= 3.0;
    detail = "distortion " + fmt("%.5f", finals[0].report.distortion) + " -> " + fmt("%.5f", finals[1].report.distortion) +
             " -> " + fmt("%.5f", finals[2].report.distortion) + " for lambda_d 0/10/100 (each drop >= 20%), " +
             "pixel-FID ratio 100:0 = " + fmt("%.3f", ratio) + " (<= 3), ";
  }
  for (const auto& v : violations) detail += "violation: " + ablation::describe(v) + "; ";
  return {ok, detail + fmt("%.1f min", minutes) + " (< 45 min)"};
}

// Linear generator: every pixel of image block a is W z_a.
Outcome spatial_pl() {
  std::mt19937_64 rng(5);
  const int n = 3, nz = 4, rows = 2, cols = 3, f = 2, ch = 3;
  const Tensor w = random_normal({ch, nz, 1, 1}, rng);
  const auto g = [&](const Tensor& z) { return upsample_nearest(conv2d(z, w), f); };
  const Tensor z = random_normal({n, nz, rows, cols}, rng);
  const Tensor probes = random_normal({n, ch, rows * f, cols * f}, rng);
  const auto part = blocks::BlockPartition::grid(rows * f, cols * f, rows, cols);
  const Real gp = 1.0, gm = 0.1;
  const Real got = reg::spatial_path_length(g, z, probes, part, gp, gm).item();

  Eigen::MatrixXd wm(ch, nz);
  for (int o = 0; o < ch; ++o)
    for (int i = 0; i < nz; ++i) wm(o, i) = w.at(o * nz + i);
  const int blocks_n = rows * cols, H = rows * f, W = cols * f;
  Real expected = 0.0;
  for (int b = 0; b < n; ++b) {
    for (int a = 0; a < blocks_n; ++a) {
      Eigen::VectorXd ysum = Eigen::VectorXd::Zero(ch);
      for (int i = 0; i < f; ++i)
        for (int j = 0; j < f; ++j)
          for (int o = 0; o < ch; ++o) {
            const int r = (a / cols) * f + i, c = (a % cols) * f + j;
            ysum(o) += probes.at(((static_cast<std::size_t>(b) * ch + o) * H + r) * W + c);
          }
      const Real self = (wm.transpose() * ysum).norm();
      expected += (self - gp) * (self - gp) + (blocks_n - 1) * gm * gm;
    }
  }
  expected /= n;
  const Real fixture_err = std::abs(got - expected);

  const auto t0 = std::chrono::steady_clock::now();
  std::string runs;
  bool ok = fixture_err <= 1e-8;
  for (double weight : {2.0, 200.0, 20000.0}) {
    TrainConfig c;
    c.generator.latent_rows = c.generator.latent_cols = 2;
    c.generator.channels = {16, 16, 16, 16};  // 2x2 latent -> 16x16 images
    c.discriminator.channels = {16, 16, 16};
    c.reg.pl_mode = PathLengthMode::spatial;
    c.reg.lambda_pl = weight;
    c.steps = 500;
    auto state = train::TrainState::init(c);
    const auto data = train::dataset_for(c);
    Real last_pl = 0.0;
    try {
      train::train(state, data, [&](const train::TrainState&, const train::StepLogs& l) {
        if (l.pl_applied) last_pl = l.path_length;
      });
      runs += " weight " + fmt("%g", weight) + ": 500 steps, last penalty " + fmt("%.4f", last_pl) + ";";
    } catch (const train::TrainingDiverged& e) {
      ok = false;
      runs += " weight " + fmt("%g", weight) + ": DIVERGED " + e.what() + ";";
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ok, "linear closed form |diff| " + fmt("%.2e", fixture_err) + " (<= 1e-8);" + runs + fmt(" %.0fs", secs)};
}

Outcome determinism() {
  TrainConfig c = ablation_config();  // full toy run with every regularizer active
  c.reg.lambda_d = 10.0;
  const auto run = [&] {
    auto s = train::TrainState::init(c);
    const auto data = train::dataset_for(c);
    train::train(s, data);
    return checkpoint::serialize(s);
  };
  const auto a = run(), b = run();
  const bool same_ckpt = a == b && checkpoint::serialize(checkpoint::deserialize(a)) == a;

  const auto dir = std::filesystem::temp_directory_path() / ("ssn_accept_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto ckpt = (dir / "model.ssnc").string();
  {
    std::vector<std::uint8_t> bytes = a;
    std::FILE* f = std::fopen(ckpt.c_str(), "wb");
    std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
  }
  std::vector<std::uint8_t> live_png, first_png;
  std::string id;
  {
    service::SessionStore store(dir / "sessions");
    id = store.create(ckpt, 42, std::nullopt, std::nullopt);
    first_png = store.with_session(id, false, [](const service::Session& s) { return s.png(); });
    store.with_session(id, true, [](service::Session& s) { s.resample({0, 1}, s.revision()); });
    store.with_session(id, true, [](service::Session& s) { s.resample({5}, s.revision()); });
    live_png = store.with_session(id, false, [](const service::Session& s) { return s.png(); });
  }
  service::SessionStore restarted(dir / "sessions");
  const auto reloaded = restarted.with_session(id, false, [](const service::Session& s) { return s.png(); });
  restarted.with_session(id, true, [](service::Session& s) {
    s.undo(s.revision());
    s.undo(s.revision());
  });
  const auto undone = restarted.with_session(id, false, [](const service::Session& s) { return s.png(); });
  std::filesystem::remove_all(dir);
  const bool same_png = reloaded == live_png && undone == first_png && live_png != first_png;
  return {same_ckpt && same_png,
          "two " + std::to_string(c.steps) + "-step runs: checkpoints " + (a == b ? "bit-identical" : "DIFFER") + " (" +
              std::to_string(a.size()) + " bytes), save(load) " +
              (checkpoint::serialize(checkpoint::deserialize(a)) == a ? "identical" : "DIFFERS") +
              "; session PNG after restart " + (reloaded == live_png ? "byte-identical" : "DIFFERS") +
              ", after undo to start " + (undone == first_png ? "byte-identical" : "DIFFERS")};
}

struct Criterion {
  const char* name;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"gradients", "gradient correctness", gradients},
      {"layer_algebra", "layer algebra", layer_algebra},
      {"sigma_e", "expected-std statistics", sigma_e},
      {"ldbr", "exact block-resampling suite", ldbr_suite},
      {"resampling", "resampling by construction", resampling},
      {"ablation", "lambda_d ablation trend", ablation_trend},
      {"spatial_pl", "spatial path-length harness", spatial_pl},
      {"determinism", "determinism", determinism},
  };
  std::string only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only NAME]\n");
      return 2;
    }
  }
  bool all = true, matched = false;
  for (const auto& c : criteria) {
    if (!only.empty() && only != c.name) continue;
    matched = true;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s (%s): %s\n", o.passed ? "PASS" : "FAIL", c.name, c.title, o.detail.c_str());
    std::fflush(stdout);
    all = all && o.passed;
  }
  if (!matched) {
    std::fprintf(stderr, "unknown criterion '%s'\n", only.c_str());
    return 2;
  }
  return all ? 0 : 1;
}
