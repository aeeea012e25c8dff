// ssn: train, ablate, generate, resample, verify-ldbr, gradcheck, serve.
#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ssn/ablation.hpp"
#include "ssn/checkpoint.hpp"
#include "ssn/gradcheck.hpp"
#include "ssn/http_service.hpp"
#include "ssn/ldbr.hpp"
#include "ssn/png.hpp"
#include "ssn/session.hpp"
#include "ssn/train.hpp"

namespace fs = std::filesystem;
using namespace ssn;

namespace {

// Exit codes: 0 ok, 1 check failed, 2 usage or config error, 3 runtime error.
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

// --config plus one flag per config key.
void add_config_flags(CLI::App* app, ConfigFlags& flags) {
  app->add_option("--config", flags.config_path, "key = value config file");
  for (const auto& key : config_keys()) {
    app->add_option_function<std::string>("--" + key, [&flags, key](const std::string& v) { flags.overrides[key] = v; },
                                           "config key " + key);
  }
}

TrainConfig resolve(const ConfigFlags& flags) {
  TrainConfig c = flags.config_path.empty() ? TrainConfig{} : load_config(flags.config_path);
  for (const auto& [k, v] : flags.overrides) set_field(c, k, v);
  if (const char* out = std::getenv("SSN_OUT"); out && *out) c.output_dir = out;
  c.validate();
  return c;
}

fs::path output_dir(const TrainConfig& c) {
  fs::create_directories(c.output_dir);
  return c.output_dir;
}

fs::path output_dir_for(const std::string& flag) {
  const char* env = std::getenv("SSN_OUT");
  fs::path p = env && *env ? fs::path(env) : fs::path(flag);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + p.string());
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  write_file(p, std::string(b.begin(), b.end()));
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + item + "' in list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

// "1,1;1,2" -> 1-based (row, col) pairs.
std::vector<std::pair<int, int>> parse_blocks(const std::string& text) {
  std::vector<std::pair<int, int>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    int r = 0, c = 0;
    char comma = 0;
    std::istringstream is(item);
    if (!(is >> r >> comma >> c) || comma != ',') throw ConfigError("bad block '" + item + "', expected row,col");
    out.emplace_back(r, c);
  }
  if (out.empty()) throw ConfigError("no blocks given");
  return out;
}

int cmd_train(const ConfigFlags& flags, int checkpoint_every) {
  const TrainConfig cfg = resolve(flags);
  const fs::path out = output_dir(cfg);
  write_file(out / "config.txt", to_text(cfg));
  auto state = train::TrainState::init(cfg);
  const auto data = train::dataset_for(cfg);
  std::ofstream log(out / "train_log.csv", std::ios::trunc);
  log << "step,d_loss,g_loss,r1,path_length,distortion,pl_mean\n";
  const auto t0 = std::chrono::steady_clock::now();
  train::train(state, data, [&](const train::TrainState& s, const train::StepLogs& l) {
    if (l.step % cfg.log_interval == 0 || s.step == cfg.steps) {
      log << l.step << ',' << num(l.d_loss) << ',' << num(l.g_loss) << ',' << num(l.r1) << ','
          << num(l.path_length) << ',' << num(l.distortion) << ',' << num(l.pl_mean) << "\n";
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "step " << l.step << "  d " << num(l.d_loss) << "  g " << num(l.g_loss) << "  rd "
                << num(l.distortion) << "  " << num(secs) << "s" << std::endl;
    }
    if (checkpoint_every > 0 && s.step % checkpoint_every == 0) {
      checkpoint::save(s, (out / ("checkpoint_" + std::to_string(s.step) + ".ssnc")).string());
    }
  });
  checkpoint::save(state, (out / "checkpoint.ssnc").string());
  const auto report = metrics::evaluate(cfg, state.g, data);
  write_file(out / "metrics.csv", "lambda_d,step,pixel_fid,pixel_ppl,distortion\n" + num(cfg.reg.lambda_d) + "," +
                                      std::to_string(state.step) + "," + num(report.pixel_fid) + "," +
                                      num(report.pixel_ppl) + "," + num(report.distortion) + "\n");
  std::cout << "pixel-FID " << num(report.pixel_fid) << "  pixel-PPL " << num(report.pixel_ppl) << "  distortion "
            << num(report.distortion) << "\nwrote " << (out / "checkpoint.ssnc").string() << "\n";
  return report.finite() ? 0 : kCheckFailed;
}

int cmd_ablate(const ConfigFlags& flags, const std::string& lambdas, int eval_every, double min_drop) {
  const TrainConfig cfg = resolve(flags);
  const fs::path out = output_dir(cfg);
  const auto list = lambdas.empty() ? ablation::kDefaultLambdas : parse_list(lambdas);
  const auto result = ablation::run_sweep(cfg, list, eval_every, [](const ablation::SweepRow& row) {
    const auto& r = row.report;
    std::cout << "lambda_d " << num(r.lambda_d) << "  step " << r.step << "  pixel-FID " << num(r.pixel_fid)
              << "  pixel-PPL " << num(r.pixel_ppl) << "  distortion " << num(r.distortion) << "  "
              << num(r.seconds) << "s" << (row.flag.empty() ? "" : "  FLAGGED: " + row.flag) << std::endl;
  });
  write_file(out / "ablation.csv", ablation::to_csv(result));
  write_file(out / "pareto.csv", ablation::pareto_csv(result));
  const auto violations = ablation::trend_violations(result, min_drop);
  for (const auto& v : violations) std::cout << "trend violation: " << ablation::describe(v) << "\n";
  std::cout << "wrote " << (out / "ablation.csv").string() << " and " << (out / "pareto.csv").string() << "\n";
  return violations.empty() ? 0 : kCheckFailed;
}

int cmd_generate(const std::string& ckpt, std::uint64_t seed, int count, const std::string& out_flag) {
  const auto model = service::load_model(ckpt);
  const fs::path out = output_dir_for(out_flag);
  for (int i = 0; i < count; ++i) {
    const service::Session s("g", model, seed + static_cast<std::uint64_t>(i), model->config.latent_rows,
                             model->config.latent_cols);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03d.png", i);
    write_bytes(out / name, s.png());
  }
  std::cout << "wrote " << count << " images to " << out.string() << "\n";
  return 0;
}

int cmd_resample(const std::string& ckpt, std::uint64_t seed, const std::string& blocks_text,
                 const std::string& out_flag) {
  const auto model = service::load_model(ckpt);
  const fs::path out = output_dir_for(out_flag);
  service::Session s("r", model, seed, model->config.latent_rows, model->config.latent_cols);
  write_bytes(out / "before.png", s.png());
  std::vector<std::size_t> targets;
  for (const auto& [r, c] : parse_blocks(blocks_text)) targets.push_back(s.block_index(r, c));
  const auto result = s.resample(targets, s.revision());
  write_bytes(out / "after.png", result.png);
  std::cout << "distortion outside resampled blocks: " << num(result.distortion_outside) << "\nblock change:\n";
  const int cols = s.latent().cols();
  for (int r = 0; r < s.latent().rows(); ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::size_t a = static_cast<std::size_t>(r) * cols + c;
      std::cout << (result.changed[a] ? " *" : "  ") << num(result.block_change[a]);
    }
    std::cout << "\n";
  }
  std::cout << "wrote " << (out / "before.png").string() << " and " << (out / "after.png").string() << "\n";
  return 0;
}

int cmd_verify_ldbr(const std::string& out_flag) {
  const auto report = ldbr::sequential_inpainting_counterexample();
  std::cout << ldbr::format_report(report);
  const auto fx = ldbr::independent_blocks_fixture();
  const auto indep = ldbr::is_block_resampling(ldbr::inpainting_family(fx.space, fx.base), fx.base);
  std::cout << "independent blocks: inpainting is a block-resampling: " << (indep.is_block_resampling ? "yes" : "no")
            << " (max TV " << indep.max_tv << ")\n";
  if (!out_flag.empty()) write_file(output_dir_for(out_flag) / "ldbr_report.csv", ldbr::report_csv(report));
  const bool ok = report.p_reach_zeros == 0.0 && report.tv_to_base == 0.5 &&
                  !report.inpainting_check.is_block_resampling && report.trivial_check.is_block_resampling &&
                  report.trivial_check.max_tv < 1e-12 && indep.is_block_resampling && indep.max_tv < 1e-12;
  std::cout << (ok ? "all LDBR checks passed\n" : "LDBR CHECK FAILED\n");
  return ok ? 0 : kCheckFailed;
}

int cmd_gradcheck(std::uint64_t seed, int points) {
  bool ok = true;
  for (const auto& c : gradcheck::run_suite(seed, points)) {
    std::printf("%-4s %-40s %s  worst %.3e  tol %.0e\n", c.passed() ? "ok" : "FAIL", c.name.c_str(),
                c.second_order ? "2nd" : "1st", c.worst_error, c.tolerance);
    ok = ok && c.passed();
  }
  return ok ? 0 : kCheckFailed;
}

service::HttpServer* g_server = nullptr;

int cmd_serve(const std::string& ckpt, const std::string& host, int port, const std::string& sessions) {
  service::SessionStore store(sessions, ckpt);
  const service::Api api(store);
  service::HttpServer server(api);
  const int bound = server.bind(host, port);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::cout << "serving on http://" << host << ":" << bound << std::endl;
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially stochastic networks: training, ablation, block resampling and checks"};
  app.require_subcommand(1);

  ConfigFlags train_flags, ablate_flags;
  int checkpoint_every = 0;
  auto* train_cmd = app.add_subcommand("train", "train a toy model and write a checkpoint");
  add_config_flags(train_cmd, train_flags);
  train_cmd->add_option("--checkpoint-every", checkpoint_every, "also save every N steps");

  std::string lambdas;
  int eval_every = 0;
  double min_drop = 0.0;
  auto* ablate_cmd = app.add_subcommand("ablate", "lambda_d sweep with pixel metrics and trade-off points");
  add_config_flags(ablate_cmd, ablate_flags);
  ablate_cmd->add_option("--lambdas", lambdas, "comma-separated lambda_d values (default 0,1,10,100,1000,10000)");
  ablate_cmd->add_option("--eval-every", eval_every, "evaluate every N steps as well as at the end");
  ablate_cmd->add_option("--min-drop", min_drop, "required relative distortion drop between adjacent lambda_d")
      ->check(CLI::Range(0.0, 1.0));

  std::string ckpt, out = "ssn_out", blocks_text, host = "127.0.0.1", sessions = "ssn_sessions";
  std::uint64_t seed = 0;
  int count = 8, port = 8080, points = 10;
  auto* gen_cmd = app.add_subcommand("generate", "write PNG samples from a checkpoint");
  gen_cmd->add_option("--checkpoint", ckpt)->required();
  gen_cmd->add_option("--seed", seed);
  gen_cmd->add_option("--count", count)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--out", out);

  auto* res_cmd = app.add_subcommand("resample", "resample latent blocks of one generation");
  res_cmd->add_option("--checkpoint", ckpt)->required();
  res_cmd->add_option("--seed", seed);
  res_cmd->add_option("--blocks", blocks_text, "1-based row,col pairs separated by ';'")->required();
  res_cmd->add_option("--out", out);

  std::string ldbr_out;
  auto* ldbr_cmd = app.add_subcommand("verify-ldbr", "exact block-resampling checks on tiny discrete spaces");
  ldbr_cmd->add_option("--out", ldbr_out, "also write ldbr_report.csv here");

  std::uint64_t gc_seed = 7;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference checks of every op and layer");
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_option("--points", points)->check(CLI::PositiveNumber);

  auto* serve_cmd = app.add_subcommand("serve", "HTTP session service");
  serve_cmd->add_option("--checkpoint", ckpt, "default checkpoint for new sessions");
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--sessions", sessions, "session persistence directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_flags, checkpoint_every);
    if (*ablate_cmd) return cmd_ablate(ablate_flags, lambdas, eval_every, min_drop);
    if (*gen_cmd) return cmd_generate(ckpt, seed, count, out);
    if (*res_cmd) return cmd_resample(ckpt, seed, blocks_text, out);
    if (*ldbr_cmd) return cmd_verify_ldbr(ldbr_out);
    if (*gc_cmd) return cmd_gradcheck(gc_seed, points);
    if (*serve_cmd) return cmd_serve(ckpt, host, port, sessions);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const service::ServiceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return kUsage;
}
