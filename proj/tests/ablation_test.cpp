#include <gtest/gtest.h>

#include <sstream>

#include "ssn/ablation.hpp"
#include "ssn/train.hpp"
#include "test_configs.hpp"

using namespace ssn;
using namespace ssn::ablation;
using ssn::testing::tiny_config;

namespace {

std::vector<std::string> data_lines(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') out.push_back(line);
  return out;
}

SweepRow row(double lambda, Real distortion, std::string flag = {}) {
  return {{lambda, 10, 1.0, 0.5, distortion, 1.0}, std::move(flag)};
}

}  // namespace

TEST(AblationTest, SweepCsvSchemaAndDeterminism) {
  TrainConfig c = tiny_config();
  c.steps = 2;
  const auto result = run_sweep(c, {0.0, 10.0, 0.0});
  ASSERT_EQ(result.rows.size(), 3u);
  const auto lines = data_lines(to_csv(result));
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "lambda_d,step,pixel_fid,pixel_ppl,distortion,seconds");
  const auto& a = result.rows[0].report;
  const auto& b = result.rows[2].report;
  EXPECT_EQ(a.pixel_fid, b.pixel_fid);
  EXPECT_EQ(a.pixel_ppl, b.pixel_ppl);
  EXPECT_EQ(a.distortion, b.distortion);
  EXPECT_EQ(a.step, 2);
  EXPECT_NE(to_csv(result).find("lambda_d=100 -> 0.0043"), std::string::npos);
  EXPECT_EQ(data_lines(pareto_csv(result))[0], "pixel_fid,distortion");
}

TEST(AblationTest, IntermediateEvaluations) {
  TrainConfig c = tiny_config();
  c.steps = 4;
  const auto result = run_sweep(c, {1.0}, 2);
  ASSERT_EQ(result.rows.size(), 2u);
  EXPECT_EQ(result.rows[0].report.step, 2);
  EXPECT_EQ(result.rows[1].report.step, 4);
  EXPECT_EQ(result.finals().size(), 1u);
  EXPECT_EQ(result.finals()[0].report.step, 4);
}

TEST(AblationTest, DivergenceIsFlaggedAndSweepContinues) {
  TrainConfig c = tiny_config();
  c.steps = 30;
  c.lr = 1e300;
  c.reg.lambda_r1 = 0.0;
  const auto result = run_sweep(c, {0.0, 1.0});
  ASSERT_EQ(result.rows.size(), 2u);
  for (const auto& r : result.rows) EXPECT_FALSE(r.flag.empty());
  EXPECT_NE(to_csv(result).find("# flagged lambda_d=0"), std::string::npos);
  EXPECT_EQ(data_lines(pareto_csv(result)).size(), 1u);
  EXPECT_EQ(trend_violations(result).size(), 1u);
}

TEST(AblationTest, TrendViolationsAreReported) {
  SweepResult r;
  r.rows = {row(100, 0.004), row(0, 0.02), row(10, 0.015)};
  EXPECT_TRUE(trend_violations(r).empty());
  ASSERT_EQ(trend_violations(r, 0.3).size(), 1u);  // 0.02 -> 0.015 is a 25% drop
  EXPECT_EQ(trend_violations(r, 0.3)[0].lambda_low, 0.0);

  r.rows.push_back(row(1000, 0.005));
  const auto v = trend_violations(r);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].lambda_high, 1000.0);
  EXPECT_NE(describe(v[0]).find("lambda_d=1000"), std::string::npos);

  const auto pareto = data_lines(pareto_csv(r));
  ASSERT_EQ(pareto.size(), 5u);
  EXPECT_EQ(pareto[1], "1,0.02");
  EXPECT_EQ(pareto[4], "1,0.005");
}

TEST(AblationTest, DistortionRegularizerLowersDistortion) {
  TrainConfig c = tiny_config();
  c.steps = 150;
  c.eval_pairs = 128;
  c.reg.lambda_d = 100.0;
  const auto data = train::dataset_for(c);
  auto s = train::TrainState::init(c);
  const Real before = metrics::evaluate(c, s.g, data).distortion;
  train::train(s, data);
  const Real after = metrics::evaluate(c, s.g, data).distortion;
  EXPECT_LT(after, before);
}
