#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include <fourpl/initialization.hpp>

#include "test_support.hpp"

using namespace fourpl;
using fourpl::testing::Rng;

namespace {

Dataset from_columns(const std::vector<double>& x, const std::vector<double>& y) {
  Table t;
  t.add("y", y);
  t.add("x", x);
  return build_design(ModelSpec::simple("x"), t);
}

std::vector<double> iota12() {
  std::vector<double> x(12);
  std::iota(x.begin(), x.end(), 1.0);
  return x;
}

// Type-7 quantile written out directly.
double oracle_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (v.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - lo) * (v[lo + 1] - v[lo]);
}

}  // namespace

TEST(InitialValues, StepResponseHandValues) {
  std::vector<double> y(12, 0.0);
  std::fill(y.begin() + 6, y.end(), 1.0);
  const auto [p, diag] = initial_values(from_columns(iota12(), y), ModelSpec::simple("x"));
  EXPECT_NEAR(diag.tertile_low, 14.0 / 3.0, 1e-12);
  EXPECT_NEAR(diag.tertile_high, 25.0 / 3.0, 1e-12);
  EXPECT_EQ(diag.uli, 1.0);
  EXPECT_TRUE(diag.crossing_found);
  EXPECT_NEAR(diag.midpoint_level, 6.5, 1e-12);
  EXPECT_EQ(p.c[0], kAsymptoteMargin);
  EXPECT_EQ(p.d[0], 1.0 - kAsymptoteMargin);
  EXPECT_EQ(p.b[1], 4.0);
  EXPECT_NEAR(p.b[0], -26.0, 1e-12);
}

TEST(InitialValues, DecreasingResponseFlipsSlope) {
  std::vector<double> y(12, 1.0);
  std::fill(y.begin() + 6, y.end(), 0.0);
  const auto [p, diag] = initial_values(from_columns(iota12(), y), ModelSpec::simple("x"));
  EXPECT_EQ(p.b[1], -4.0);
  EXPECT_NEAR(diag.midpoint_level, 6.5, 1e-12);
  EXPECT_NEAR(p.b[0], 26.0, 1e-12);
}

TEST(InitialValues, AsymptotesClampedToStartingRange) {
  const std::vector<double> y{0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 1, 0};
  const auto [p, diag] = initial_values(from_columns(iota12(), y), ModelSpec::simple("x"));
  EXPECT_EQ(diag.p_lower, 0.5);
  EXPECT_EQ(diag.p_upper, 0.5);
  EXPECT_EQ(diag.uli, 0.5);
  EXPECT_EQ(p.c[0], 0.45);
  EXPECT_EQ(p.d[0], 0.55);
  EXPECT_EQ(p.b[1], 2.0);
}

TEST(InitialValues, GroupCoefficientsStartAtZero) {
  Rng rng(1);
  const auto truth = fourpl::testing::random_params(rng, ModelKind::GroupSpecific);
  const auto d = fourpl::testing::random_dataset(rng, truth, ModelKind::GroupSpecific, 300);
  const auto [p, diag] = initial_values(d, ModelSpec::group_specific("x", "g"));
  ASSERT_EQ(p.b.size(), 4);
  EXPECT_EQ(p.b[2], 0.0);
  EXPECT_EQ(p.b[3], 0.0);
  EXPECT_EQ(p.c[1], 0.0);
  EXPECT_EQ(p.d[1], 0.0);
}

TEST(InitialValues, MatchesOracleStatisticsOnRandomData) {
  Rng rng(2);
  for (int draw = 0; draw < 100; ++draw) {
    const auto truth = fourpl::testing::random_params(rng, ModelKind::Simple);
    const auto d = fourpl::testing::random_dataset(rng, truth, ModelKind::Simple, 200);
    const auto [p, diag] = initial_values(d, ModelSpec::simple("x"));

    std::vector<double> x(d.x.col(1).data(), d.x.col(1).data() + d.size());
    const double t1 = oracle_quantile(x, 1.0 / 3.0), t2 = oracle_quantile(x, 2.0 / 3.0);
    double lo = 0, nlo = 0, hi = 0, nhi = 0;
    for (Index i = 0; i < d.size(); ++i) {
      if (d.x(i, 1) <= t1) {
        lo += d.y[i];
        ++nlo;
      } else if (d.x(i, 1) > t2) {
        hi += d.y[i];
        ++nhi;
      }
    }
    const double uli = hi / nhi - lo / nlo;
    EXPECT_NEAR(diag.uli, uli, 1e-12);
    EXPECT_NEAR(p.b[1], 4.0 * uli, 1e-12);
    EXPECT_GE(p.c[0], kAsymptoteMargin);
    EXPECT_LE(p.c[0], 0.45);
    EXPECT_GE(p.d[0], 0.55);
    EXPECT_LE(p.d[0], 1.0 - kAsymptoteMargin);
    EXPECT_TRUE(is_interior(p, unique_rows(d.z)));
    EXPECT_GE(diag.midpoint_level, *std::min_element(x.begin(), x.end()));
    EXPECT_LE(diag.midpoint_level, *std::max_element(x.begin(), x.end()));
  }
}

TEST(InitialValues, RespondentOrderIrrelevant) {
  Rng rng(3);
  for (int draw = 0; draw < 50; ++draw) {
    const auto truth = fourpl::testing::random_params(rng, ModelKind::GroupSpecific);
    const auto d = fourpl::testing::random_dataset(rng, truth, ModelKind::GroupSpecific, 150);
    std::vector<Index> perm(static_cast<std::size_t>(d.size()));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Dataset s = d;
    for (Index i = 0; i < d.size(); ++i) {
      s.y[i] = d.y[perm[i]];
      s.x.row(i) = d.x.row(perm[i]);
      s.z.row(i) = d.z.row(perm[i]);
    }
    const auto spec = ModelSpec::group_specific("x", "g");
    EXPECT_TRUE(initial_values(d, spec).first == initial_values(s, spec).first);
  }
}

TEST(InitialValues, Errors) {
  const auto spec = ModelSpec::simple("x");
  EXPECT_THROW(initial_values(from_columns(std::vector<double>(12, 3.0), {0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1}), spec),
               ModelError);
  EXPECT_THROW(initial_values(from_columns({1, 2, 3, 4, 5, 6, 7, 8, 8, 8}, {0, 1, 0, 1, 0, 1, 0, 1, 0, 1}), spec),
               ModelError);
  EXPECT_THROW(initial_values(from_columns(iota12(), std::vector<double>(12, 1.0)), spec), ModelError);
  EXPECT_THROW(initial_values(from_columns(iota12(), std::vector<double>(12, 0.0)), spec), ModelError);
  std::vector<double> y(12, 0.0);
  std::fill(y.begin() + 6, y.end(), 1.0);
  EXPECT_THROW(initial_values(from_columns(iota12(), y), ModelSpec::group_specific("x", "g")), ModelError);
}

TEST(InitialValues, SlopeFromTertileProbabilities) {
  // x = 1..75: first tertile group 1..25 with 5 endorsements, last 51..75 with 22
  std::vector<double> x(75), y(75, 0.0);
  std::iota(x.begin(), x.end(), 1.0);
  for (int i : {0, 5, 10, 15, 20}) y[static_cast<std::size_t>(i)] = 1.0;
  for (int i = 25; i < 50; ++i) y[static_cast<std::size_t>(i)] = i % 2;
  for (int i = 50; i < 72; ++i) y[static_cast<std::size_t>(i)] = 1.0;
  const auto [p, diag] = initial_values(from_columns(x, y), ModelSpec::simple("x"));
  EXPECT_NEAR(diag.uli, 0.88 - 0.20, 1e-12);
  EXPECT_NEAR(p.b[1], 2.72, 1e-12);
}

TEST(InitialValues, SteepLogisticDataClampsAsymptotes) {
  Rng rng(4);
  std::vector<double> x(10000), y(10000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = fourpl::testing::normal(rng);
    y[i] = fourpl::testing::uniform(rng, 0, 1) < 1.0 / (1.0 + std::exp(-20.0 * x[i])) ? 1.0 : 0.0;
  }
  const auto [p, diag] = initial_values(from_columns(x, y), ModelSpec::simple("x"));
  EXPECT_EQ(p.c[0], kAsymptoteMargin);
  EXPECT_EQ(p.d[0], 1.0 - kAsymptoteMargin);
  EXPECT_GT(p.b[1], 0.0);
  EXPECT_NEAR(diag.midpoint_level, 0.0, 0.05);
}
