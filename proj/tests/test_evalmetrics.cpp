#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "premixer/error.hpp"
#include "premixer/metrics.hpp"
#include "premixer/rng.hpp"

using namespace premixer;

namespace {

Tensor ones_mask(const Tensor& t) { return Tensor(t.shape(), 1.0); }

Tensor positive(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(5.0, 50.0);
  return t;
}

}  // namespace

TEST(Metrics, PerfectPrediction) {
  Tensor t({3}, {1, 2, 3});
  Tensor m = ones_mask(t);
  EXPECT_EQ(mae(t, t, m), 0.0);
  EXPECT_EQ(rmse(t, t, m), 0.0);
  EXPECT_EQ(mape(t, t, m), 0.0);
}

TEST(Metrics, TenPercent) {
  Tensor p({1}, {110}), t({1}, {100});
  EXPECT_NEAR(mape(p, t, ones_mask(t)), 10.0, 1e-12);
}

TEST(Metrics, MapeThresholdExcludesSmallTruth) {
  Tensor p({2}, {1, 3}), t({2}, {0, 1});
  EXPECT_NEAR(mape(p, t, ones_mask(t), 1.0), 200.0, 1e-12);
  EXPECT_NEAR(mae(p, t, ones_mask(t)), 1.5, 1e-12);
}

TEST(Metrics, MaskedEntriesIgnored) {
  Tensor p({3}, {1, 100, 3}), t({3}, {2, 0, 4});
  Tensor m({3}, {1, 0, 1});
  EXPECT_EQ(mae(p, t, m), 1.0);
  EXPECT_EQ(rmse(p, t, m), 1.0);
}

TEST(Metrics, NoValidEntriesIsUndefined) {
  Tensor p({2}, {1, 2}), t({2}, {1, 2});
  EXPECT_THROW(mae(p, t, Tensor({2})), DataError);
  EXPECT_THROW(mape(p, Tensor({2}, {0.5, 0.2}), ones_mask(t)), DataError);
}

TEST(ValidMask, ZeroAndNonFiniteTruth) {
  Tensor m = valid_mask(Tensor({4}, {1, 0, NAN, INFINITY}));
  EXPECT_EQ(m[0], 1.0);
  EXPECT_EQ(m[1], 0.0);
  EXPECT_EQ(m[2], 0.0);
  EXPECT_EQ(m[3], 0.0);
}

TEST(HorizonReport, ConstantOffset) {
  Rng rng(1);
  Tensor truth = positive({4, 12, 3, 1}, rng);
  Tensor pred = truth;
  for (double& v : pred.data()) v += 2.0;
  MetricsReport r = horizon_report(pred, truth);
  ASSERT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) {
    EXPECT_NEAR(row.values.mae, 2.0, 1e-12);
    EXPECT_NEAR(row.values.rmse, 2.0, 1e-12);
  }
  EXPECT_EQ(r.sample_count, 4u);
}

TEST(HorizonReport, OneBasedHorizonSteps) {
  Tensor truth({1, 12, 1, 1}, 10.0), pred = truth;
  for (std::size_t k = 0; k < 12; ++k) pred[k] += static_cast<double>(k + 1);  // step h is off by h
  MetricsReport r = horizon_report(pred, truth);
  EXPECT_EQ(r.row("3").values.mae, 3.0);
  EXPECT_EQ(r.row("6").values.mae, 6.0);
  EXPECT_EQ(r.row("12").values.mae, 12.0);
  EXPECT_NEAR(r.average().mae, 6.5, 1e-12);
}

TEST(HorizonReport, AverageIsMeanOfStepMaes) {
  Rng rng(2);
  Tensor truth = positive({5, 12, 4, 1}, rng), pred = positive({5, 12, 4, 1}, rng);
  MetricsReport r = horizon_report(pred, truth);
  double mean_of_steps = 0;
  for (std::size_t h = 0; h < 12; ++h) {
    double acc = 0;
    for (std::size_t s = 0; s < 5; ++s)
      for (std::size_t n = 0; n < 4; ++n) {
        const std::size_t i = (s * 12 + h) * 4 + n;
        acc += std::abs(pred[i] - truth[i]);
      }
    mean_of_steps += acc / 20.0;
  }
  EXPECT_NEAR(r.average().mae, mean_of_steps / 12.0, 1e-12);
  for (const auto& row : r.rows) EXPECT_GE(row.values.rmse, row.values.mae);
}

TEST(HorizonReport, NodePermutationInvariant) {
  Rng rng(3);
  Tensor truth = positive({3, 12, 4, 1}, rng), pred = positive({3, 12, 4, 1}, rng);
  Tensor tp(truth.shape()), pp(pred.shape());
  const std::size_t perm[4] = {2, 0, 3, 1};
  for (std::size_t o = 0; o < 36; ++o)
    for (std::size_t k = 0; k < 4; ++k) {
      tp[o * 4 + k] = truth[o * 4 + perm[k]];
      pp[o * 4 + k] = pred[o * 4 + perm[k]];
    }
  MetricsReport a = horizon_report(pred, truth), b = horizon_report(pp, tp);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(a.rows[i].values.mae, b.rows[i].values.mae, 1e-12);
    EXPECT_NEAR(a.rows[i].values.mape, b.rows[i].values.mape, 1e-10);
  }
}

TEST(HorizonReport, HorizonMustBeTwelve) {
  Tensor t({2, 6, 1, 1}, 1.0);
  EXPECT_THROW(horizon_report(t, t), ShapeError);
  ReportOptions opt;
  opt.allow_any_horizon = true;
  EXPECT_NO_THROW(horizon_report(t, t, opt));
}

TEST(HorizonReport, CsvLayout) {
  Tensor truth({1, 12, 2, 1}, 10.0), pred({1, 12, 2, 1}, 11.0);
  std::string csv = report_csv(horizon_report(pred, truth));
  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "horizon,mae,rmse,mape_percent");
  EXPECT_EQ(lines[1], "3,1.000000,1.000000,10.000000");
  EXPECT_EQ(lines[4].substr(0, 8), "average,");
}

TEST(HorizonReport, WritesCsvAndJson) {
  Tensor truth({1, 12, 2, 1}, 10.0), pred({1, 12, 2, 1}, 12.0);
  auto stem = std::filesystem::temp_directory_path() / "premixer_test_metrics";
  write_report(stem, horizon_report(pred, truth));
  EXPECT_TRUE(std::filesystem::exists(stem.string() + ".csv"));
  std::ifstream js(stem.string() + ".json");
  auto j = nlohmann::json::parse(js);
  EXPECT_FALSE(j.empty());
}
