#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "premixer/datapipe.hpp"
#include "premixer/error.hpp"
#include "premixer/pmxt.hpp"

using namespace premixer;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "premixer_test_datapipe";
  fs::create_directories(dir);
  return dir / name;
}

RawSeries series_of(std::vector<double> v) {
  RawSeries r;
  const std::size_t n = v.size();
  r.values = Tensor({n, 1, 1}, std::move(v));
  r.node_ids = {"a"};
  return r;
}

double autocorr(const Tensor& x, std::size_t lag) {
  const std::size_t n = x.dim(0);
  double mean = 0;
  for (std::size_t t = 0; t < n; ++t) mean += x.at(t, 0, 0);
  mean /= static_cast<double>(n);
  double num = 0, den = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double d = x.at(t, 0, 0) - mean;
    den += d * d;
    if (t + lag < n) num += d * (x.at(t + lag, 0, 0) - mean);
  }
  return num / den;
}

}  // namespace

TEST(Pmxt, RoundTripThroughLoader) {
  RawSeries s;
  s.values = Tensor({96, 4, 1});
  for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = 0.5 * static_cast<double>(i);
  s.node_ids = {"n0", "n1", "n2", "n3"};
  s.interval_minutes = 15;
  const fs::path p = scratch("rt.pmxt");
  save_series(p, s);
  RawSeries back = load_series(p);
  EXPECT_EQ(back.steps(), 96u);
  EXPECT_EQ(back.values.shape(), (Shape{96, 4, 1}));
  EXPECT_TRUE(bit_equal(back.values, s.values));
  EXPECT_EQ(back.node_ids, s.node_ids);
  EXPECT_EQ(back.interval_minutes, 15);
}

TEST(Pmxt, TruncatedFileIsFormatError) {
  const fs::path p = scratch("trunc.pmxt");
  auto bytes = pmxt::encode(Tensor({8, 2, 1}, 1.0));
  bytes.resize(bytes.size() - 9);
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  EXPECT_THROW(load_series(p), FormatError);
}

TEST(Pmxt, CorruptedPayloadIsFormatError) {
  auto bytes = pmxt::encode(Tensor({4, 1, 1}, 3.0));
  bytes[40] ^= 0x40;
  EXPECT_THROW(pmxt::decode(bytes), FormatError);
}

TEST(Pmxt, BadMagicReportsOffset) {
  auto bytes = pmxt::encode(Tensor({2, 1, 1}, 1.0));
  bytes[0] = 'X';
  try {
    pmxt::decode(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
  }
}

TEST(Csv, SingleSensorTenRows) {
  const fs::path p = scratch("one.csv");
  {
    std::ofstream out(p);
    out << "timestamp,node_id,value\n";
    for (int i = 0; i < 10; ++i) out << "2019-01-01T00:" << (i * 5 < 10 ? "0" : "") << i * 5 << ":00,s1," << i << "\n";
  }
  RawSeries s = load_series(p);
  EXPECT_EQ(s.values.shape(), (Shape{10, 1, 1}));
  EXPECT_EQ(s.interval_minutes, 5);
  EXPECT_EQ(s.values.at(7, 0, 0), 7.0);
}

TEST(Csv, NonMonotoneTimestampsRejected) {
  const fs::path p = scratch("bad.csv");
  {
    std::ofstream out(p);
    out << "timestamp,node_id,value\n2019-01-01T00:10:00,s1,1\n2019-01-01T00:05:00,s1,2\n";
  }
  EXPECT_THROW(load_series(p), DataError);
}

TEST(Aggregate, MeanOfGroup) {
  RawSeries out = aggregate(series_of({3, 6, 9}), 3);
  ASSERT_EQ(out.steps(), 1u);
  EXPECT_EQ(out.values[0], 6.0);
}

TEST(Aggregate, OneDayToFifteenMinutes) {
  RawSeries out = aggregate(series_of(std::vector<double>(288, 1.0)), 3);
  EXPECT_EQ(out.steps(), 96u);
}

TEST(Aggregate, ZeroFactorRejected) { EXPECT_THROW(aggregate(series_of({1, 2}), 0), ParameterError); }

TEST(Aggregate, NanSkippedUnlessWholeGroup) {
  RawSeries out = aggregate(series_of({1, NAN, 3, NAN, NAN, NAN}), 3);
  EXPECT_EQ(out.values[0], 2.0);
  EXPECT_TRUE(std::isnan(out.values[1]));
}

TEST(FillMissing, ShortGapInterpolatedLongGapCarried) {
  RawSeries s = series_of({NAN, 1, NAN, 3, 4, NAN, NAN, NAN, NAN, 9});
  const std::size_t filled = fill_missing(s, 3);
  EXPECT_EQ(filled, 6u);
  EXPECT_EQ(s.values[0], 1.0);
  EXPECT_EQ(s.values[2], 2.0);
  for (int t = 5; t < 9; ++t) EXPECT_EQ(s.values[t], 4.0);
}

TEST(Split, LargestYear) {
  RawSeries s = series_of(std::vector<double>(35040, 0.0));
  Splits sp = split_chronological(s, SplitSpec{});
  EXPECT_EQ(sp.train.steps(), 21024u);
  EXPECT_EQ(sp.val.steps(), 7008u);
  EXPECT_EQ(sp.test.steps(), 7008u);
  EXPECT_EQ(sp.val_begin, 21024u);
  EXPECT_EQ(sp.test_begin, 28032u);
}

TEST(Split, TenSteps) {
  std::vector<double> v(10);
  for (int i = 0; i < 10; ++i) v[i] = i;
  Splits sp = split_chronological(series_of(v), SplitSpec{});
  EXPECT_EQ(sp.train.steps(), 6u);
  EXPECT_EQ(sp.val.steps(), 2u);
  EXPECT_EQ(sp.test.steps(), 2u);
  EXPECT_EQ(sp.val.values[0], 6.0);
  EXPECT_EQ(sp.test.values[0], 8.0);
}

TEST(Split, TooShortRejected) { EXPECT_THROW(split_chronological(series_of({1, 2, 3}), SplitSpec{}), ConfigError); }

TEST(Normalizer, PopulationStd) {
  Normalizer n = Normalizer::fit(Tensor({2, 1, 1}, {0, 2}));
  EXPECT_EQ(n.mean()[0], 1.0);
  EXPECT_EQ(n.stddev()[0], 1.0);
  EXPECT_EQ(n.normalize(Tensor({1, 1, 1}, {2}))[0], 1.0);
}

TEST(Normalizer, ConstantChannelRejected) {
  EXPECT_THROW(Normalizer::fit(Tensor({4, 1, 1}, 5.0)), ConfigError);
}

TEST(Normalizer, DenormalizeInvertsNormalize) {
  Tensor x({5, 2, 1}, {1, 4, 9, 16, 25, 36, 49, 64, 81, 100});
  Normalizer n = Normalizer::fit(x);
  EXPECT_LT(max_abs_diff(n.denormalize(n.normalize(x)), x), 1e-12);
}

TEST(Windows, CountForLen700) {
  Tensor s({700, 2, 1});
  WindowSampler w = sample_windows(s, 12, 12, 672);
  EXPECT_EQ(w.size(), 700u - 672u - 12u + 1u);
}

TEST(Windows, BoundaryGivesNone) {
  Tensor s({683, 2, 1});
  EXPECT_TRUE(sample_windows(s, 12, 12, 672).empty());
}

TEST(Windows, SliceAlignment) {
  Tensor s({40, 1, 1});
  for (std::size_t t = 0; t < 40; ++t) s[t] = static_cast<double>(t);
  WindowSampler w(s, 4, 3, 10, 5);
  WindowSample first = w.at(0);
  EXPECT_EQ(first.anchor, 10u);
  EXPECT_EQ(first.x_long[0], 0.0);
  EXPECT_EQ(first.x_short[0], 6.0);
  EXPECT_EQ(first.y[0], 10.0);
  EXPECT_EQ(first.y[2], 12.0);
  EXPECT_EQ(w.anchors().back(), 35u);
}

TEST(Windows, SeededShuffleIsReproducible) {
  Tensor s({100, 1, 1});
  WindowSampler a(s, 4, 2, 8), b(s, 4, 2, 8);
  Rng r1(3), r2(3);
  a.shuffle(r1);
  b.shuffle(r2);
  EXPECT_EQ(a.anchors(), b.anchors());
}

TEST(Synthetic, Shape) {
  RawSeries s = generate_synthetic(SyntheticSpec{1, 1, 7});
  EXPECT_EQ(s.values.shape(), (Shape{96, 1, 1}));
  EXPECT_EQ(generate_synthetic(SyntheticSpec{50, 28, 7}).values.shape(), (Shape{2688, 50, 1}));
}

TEST(Synthetic, SeedIsBitReproducible) {
  SyntheticSpec spec{5, 3, 11};
  EXPECT_TRUE(bit_equal(generate_synthetic(spec).values, generate_synthetic(spec).values));
  SyntheticSpec other = spec;
  other.seed = 12;
  EXPECT_FALSE(bit_equal(generate_synthetic(spec).values, generate_synthetic(other).values));
}

TEST(Synthetic, DailyPeriodicity) {
  SyntheticSpec spec{1, 14, 3};
  spec.noise = 0.0;
  Tensor v = generate_synthetic(spec).values;
  EXPECT_GT(autocorr(v, 96), autocorr(v, 48));
}

TEST(Synthetic, InvalidSizes) { EXPECT_THROW(generate_synthetic(SyntheticSpec{0, 1, 1}), ParameterError); }
