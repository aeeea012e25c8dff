#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args, const std::string& env = {}) {
  const std::string cmd = env + " " + SSN_CLI_PATH + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ssn_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.cfg") << "latent_rows = 2\nlatent_cols = 2\nn_z = 4\nmapping_depth = 2\n"
                                        "g_channels = 8,8,8\nd_channels = 8,8,8\nbatch_size = 4\nsteps = 3\n"
                                        "eval_pairs = 8\nppl_samples = 4\n";
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string cfg() const { return "--config " + (dir_ / "tiny.cfg").string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, VerifyLdbrPrintsCounterexample) {
  const CliRun r = run("verify-ldbr");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("TV(final, base) = 0.5"), std::string::npos) << r.out;
}

TEST_F(CliTest, GradcheckPasses) {
  const CliRun r = run("gradcheck --points 2");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, AblateWritesOneRowPerLambda) {
  const CliRun r = run("ablate " + cfg() + " --lambdas 0,10,100", "SSN_OUT=" + dir_.string());
  EXPECT_TRUE(r.code == 0 || r.code == 1) << r.out;
  std::istringstream csv(read(dir_ / "ablation.csv"));
  std::string line;
  int rows = 0;
  bool header = false;
  while (std::getline(csv, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("lambda_d,", 0) == 0) header = true;
    else ++rows;
  }
  EXPECT_TRUE(header);
  EXPECT_EQ(rows, 3);
  EXPECT_TRUE(fs::exists(dir_ / "pareto.csv"));
}

TEST_F(CliTest, TrainGenerateResample) {
  const CliRun t = run("train " + cfg() + " --lambda_d 10 --output_dir " + (dir_ / "ignored").string(),
                    "SSN_OUT=" + (dir_ / "run").string());
  ASSERT_EQ(t.code, 0) << t.out;
  const fs::path ckpt = dir_ / "run" / "checkpoint.ssnc";
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_FALSE(fs::exists(dir_ / "ignored"));
  EXPECT_NE(read(dir_ / "run" / "config.txt").find("lambda_d = 10"), std::string::npos);

  const CliRun g = run("generate --checkpoint " + ckpt.string() + " --count 2 --out " + (dir_ / "gen").string());
  EXPECT_EQ(g.code, 0) << g.out;
  EXPECT_TRUE(fs::exists(dir_ / "gen" / "sample_001.png"));

  const CliRun r = run("resample --checkpoint " + ckpt.string() + " --blocks '1,1;2,2' --out " + (dir_ / "res").string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "res" / "after.png"));
  EXPECT_NE(r.out.find("distortion outside"), std::string::npos);
}

TEST_F(CliTest, BadInputIsAUsageError) {
  std::ofstream(dir_ / "bad.cfg") << "lambda_d = lots\n";
  EXPECT_EQ(run("train --config " + (dir_ / "bad.cfg").string()).code, 2);
  std::ofstream(dir_ / "unknown.cfg") << "no_such_key = 1\n";
  const CliRun r = run("train --config " + (dir_ / "unknown.cfg").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("no_such_key"), std::string::npos);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("resample --checkpoint " + (dir_ / "missing.ssnc").string() + " --blocks 1,1").code, 3);
}
