#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include <fourpl/estimators.hpp>
#include <fourpl/inference.hpp>
#include <fourpl/initialization.hpp>
#include <fourpl/simulation.hpp>

#include "test_support.hpp"

using namespace fourpl;
using fourpl::testing::relative_frobenius;

namespace {

// 30 respondents; every fit below converges with all asymptote slacks above 1e-3.
Dataset small_instance() { return generate_dataset(TrueParameters::simple_default(), ModelKind::Simple, 30, 53); }

FitResult fitted(Method m, const Dataset& d, ModelKind kind, FitOptions o = {}) {
  return fit(m, d, initial_values(d, spec_for(kind)).first, o);
}

FitResult pretend(Method m, ItemParameters p, Index n, double ll = 0.0) {
  FitResult r;
  r.method = m;
  r.status = ConvergenceStatus::Converged;
  r.params = std::move(p);
  r.respondents = n;
  r.log_likelihood = ll;
  r.boundary_slack = 0.1;
  r.objective_label = m == Method::NLS ? "rss" : "log_likelihood";
  return r;
}

Dataset stacked(const Dataset& d) {
  Dataset s;
  s.y.resize(2 * d.size());
  s.y << d.y, d.y;
  s.x.resize(2 * d.size(), d.x.cols());
  s.x << d.x, d.x;
  s.z.resize(2 * d.size(), d.z.cols());
  s.z << d.z, d.z;
  return s;
}

void expect_symmetric_psd(const Matrix& m) {
  EXPECT_EQ((m - m.transpose()).cwiseAbs().maxCoeff(), 0.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8);
}

}  // namespace

// -- covariance ------------------------------------------------------------------

TEST(Sandwich, MatchesNumericalOracle) {
  const auto d = small_instance();
  const auto r = fitted(Method::NLS, d, ModelKind::Simple);
  ASSERT_TRUE(r.converged());
  const auto cov = sandwich_covariance(r, d);
  EXPECT_EQ(cov.active_constraints, 0);
  EXPECT_LT(relative_frobenius(cov.matrix, fourpl::testing::oracle_sandwich(r.params.pack(), d)), 1e-4);
  expect_symmetric_psd(cov.matrix);
}

TEST(Sandwich, WeightedMatchesNumericalOracle) {
  const auto d = generate_dataset(TrueParameters::simple_default(), ModelKind::Simple, 200, 4);
  FitOptions o;
  o.weighted_nls = true;
  const auto r = fitted(Method::NLS, d, ModelKind::Simple, o);
  ASSERT_TRUE(r.converged());
  ASSERT_GT(r.boundary_slack, 1e-3);
  const auto cov = sandwich_covariance(r, d);
  EXPECT_LT(relative_frobenius(cov.matrix, fourpl::testing::oracle_sandwich(r.params.pack(), d, true)), 1e-4);
}

TEST(Sandwich, GroupLayoutMatchesNumericalOracle) {
  const auto d = generate_dataset(TrueParameters::group_default(), ModelKind::GroupSpecific, 1000, 2);
  const auto r = fitted(Method::NLS, d, ModelKind::GroupSpecific);
  ASSERT_TRUE(r.converged());
  ASSERT_GT(r.boundary_slack, 1e-3);
  const auto cov = sandwich_covariance(r, d);
  EXPECT_LT(relative_frobenius(cov.matrix, fourpl::testing::oracle_sandwich(r.params.pack(), d)), 1e-4);
}

class LikelihoodMethod : public ::testing::TestWithParam<Method> {};

TEST_P(LikelihoodMethod, ObservedInformationMatchesNumericalOracle) {
  const auto d = small_instance();
  const auto r = fitted(GetParam(), d, ModelKind::Simple);
  ASSERT_TRUE(r.converged());
  ASSERT_GT(r.boundary_slack, 1e-3);
  const auto cov = observed_information_covariance(r, d);
  EXPECT_LT(relative_frobenius(cov.matrix,
                               fourpl::testing::oracle_observed_information_inverse(r.params.pack(), d)),
            1e-4);
  expect_symmetric_psd(cov.matrix);
}

TEST_P(LikelihoodMethod, GroupLayoutMatchesNumericalOracle) {
  // interior for all three methods
  const auto d = generate_dataset(TrueParameters::group_default(), ModelKind::GroupSpecific, 1000, 21);
  const auto r = fitted(GetParam(), d, ModelKind::GroupSpecific);
  ASSERT_TRUE(r.converged());
  ASSERT_GT(r.boundary_slack, 1e-3);
  const auto cov = observed_information_covariance(r, d);
  EXPECT_LT(relative_frobenius(cov.matrix,
                               fourpl::testing::oracle_observed_information_inverse(r.params.pack(), d)),
            1e-4);
}

INSTANTIATE_TEST_SUITE_P(Methods, LikelihoodMethod, ::testing::Values(Method::MLE, Method::EM, Method::PLF),
                         [](const auto& info) { return std::string(display_name(info.param)); });

TEST(Covariance, DoublingDataHalvesVariance) {
  const auto d = generate_dataset(TrueParameters::simple_default(), ModelKind::Simple, 400, 6);
  const auto d2 = stacked(d);
  for (Method m : {Method::NLS, Method::MLE}) {
    const auto r = fitted(m, d, ModelKind::Simple);
    ASSERT_TRUE(r.converged());
    auto r2 = r;
    r2.respondents = d2.size();
    const Matrix a = default_covariance(r, d).matrix;
    const Matrix b = default_covariance(r2, d2).matrix;
    EXPECT_LT(relative_frobenius(2.0 * b, a), 1e-10) << display_name(m);
  }
}

TEST(Covariance, SymmetricPsdAcrossReplications) {
  for (auto kind : {ModelKind::Simple, ModelKind::GroupSpecific}) {
    for (std::uint64_t rep = 0; rep < 10; ++rep) {
      const auto d = generate_dataset(TrueParameters::defaults(kind), kind, 500, 77, rep);
      for (Method m : {Method::NLS, Method::MLE, Method::EM, Method::PLF}) {
        const auto r = fitted(m, d, kind);
        if (!r.converged()) continue;
        try {
          expect_symmetric_psd(default_covariance(r, d).matrix);
        } catch (const InferenceError&) {
          // unavailable is allowed; an invalid matrix is not
        }
      }
    }
  }
}

TEST(Covariance, ActiveConstraintDirectionsHaveZeroVariance) {
  // no lapses in the truth; this draw puts the upper asymptote on its bound
  auto truth = TrueParameters::simple_default();
  truth.d[0] = 1.0;
  const Dataset d = generate_dataset(truth, ModelKind::Simple, 400, 1);
  const auto r = fitted(Method::MLE, d, ModelKind::Simple);
  ASSERT_TRUE(r.converged()) << r.message;
  ASSERT_LT(r.boundary_slack, 1e-8);
  const auto cov = observed_information_covariance(r, d);
  EXPECT_GE(cov.active_constraints, 1);
  expect_symmetric_psd(cov.matrix);
  EXPECT_NEAR(r.params.d[0], 1.0 - kAsymptoteMargin, 1e-12);
  EXPECT_LT(std::abs(cov.matrix(3, 3)), 1e-12);
}

TEST(Covariance, SingleGroupIsSingular) {
  const auto d1 = generate_dataset(TrueParameters::simple_default(), ModelKind::Simple, 300, 9);
  Dataset d;
  d.y = d1.y;
  d.x = Matrix::Zero(d1.size(), 4);
  d.x.leftCols(2) = d1.x;
  d.z = Matrix::Zero(d1.size(), 2);
  d.z.col(0).setOnes();
  const ItemParameters p{Vector{{0.0, 1.5, 0.0, 0.0}}, Vector{{0.25, 0.0}}, Vector{{0.9, 0.0}}};
  EXPECT_THROW(sandwich_covariance(pretend(Method::NLS, p, d.size()), d), InferenceError);
  EXPECT_THROW(observed_information_covariance(pretend(Method::MLE, p, d.size()), d), InferenceError);
}

TEST(Covariance, PreconditionErrors) {
  const auto d = small_instance();
  const ItemParameters p{Vector{{0.0, 1.5}}, Vector{{0.25}}, Vector{{0.9}}};
  EXPECT_THROW(sandwich_covariance(pretend(Method::MLE, p, 30), d), InferenceError);
  EXPECT_THROW(observed_information_covariance(pretend(Method::NLS, p, 30), d), InferenceError);
  auto dnf = pretend(Method::MLE, p, 30);
  dnf.status = ConvergenceStatus::DidNotFinish;
  EXPECT_THROW(observed_information_covariance(dnf, d), InferenceError);
  const ItemParameters wrong{Vector{{0.0, 1.5, 0.0, 0.0}}, Vector{{0.25, 0.0}}, Vector{{0.9, 0.0}}};
  EXPECT_THROW(observed_information_covariance(pretend(Method::MLE, wrong, 30), d), InferenceError);
}

// -- intervals --------------------------------------------------------------------

TEST(Wald, NormalQuantile) { EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-14); }

TEST(Wald, UpperAsymptoteTruncatedAtOne) {
  const ItemParameters p{Vector{{0.0, 1.5}}, Vector{{0.25}}, Vector{{0.9}}};
  CovarianceEstimate cov;
  cov.matrix = Matrix::Zero(4, 4);
  cov.matrix(3, 3) = 0.01;
  const auto ci = wald_intervals(pretend(Method::MLE, p, 100), cov, 0.95, {"b0", "b1", "c", "d"});
  ASSERT_EQ(ci.size(), 4u);
  EXPECT_EQ(ci[3].name, "d");
  EXPECT_NEAR(ci[3].lower, 0.7040036015459946, 1e-14);
  EXPECT_EQ(ci[3].upper, 1.0);
  EXPECT_TRUE(ci[3].truncated);
  EXPECT_FALSE(ci[2].truncated);
  EXPECT_EQ(ci[2].lower, 0.25);
  EXPECT_EQ(ci[0].name, "b0");
}

TEST(Wald, OffsetsAreNotTruncated) {
  const ItemParameters p{Vector{{0.0, 1.5, -1.0, 0.5}}, Vector{{0.25, -0.15}}, Vector{{0.9, 0.1}}};
  CovarianceEstimate cov;
  cov.matrix = 0.04 * Matrix::Identity(8, 8);
  const auto ci = wald_intervals(pretend(Method::MLE, p, 100), cov);
  EXPECT_NEAR(ci[5].lower, -0.15 - 1.959963984540054 * 0.2, 1e-14);
  EXPECT_FALSE(ci[5].truncated);
  EXPECT_TRUE(ci[4].truncated);
  EXPECT_EQ(ci[4].lower, 0.0);
  EXPECT_TRUE(ci[6].truncated);
  EXPECT_EQ(ci[6].upper, 1.0);
  EXPECT_EQ(ci[7].name, "theta7");
}

TEST(Wald, AsymptoteIntervalsCombineOffsets) {
  const ItemParameters p{Vector{{0.0, 1.5, -1.0, 0.5}}, Vector{{0.25, -0.15}}, Vector{{0.9, 0.05}}};
  CovarianceEstimate cov;
  cov.matrix = Matrix::Zero(8, 8);
  cov.matrix.block(4, 4, 2, 2) << 0.0004, -0.0001, -0.0001, 0.0009;
  cov.matrix.block(6, 6, 2, 2) << 0.0001, 0.0, 0.0, 0.0016;
  const Matrix rows{{1.0, 0.0}, {1.0, 1.0}};
  const auto ci = asymptote_intervals(pretend(Method::MLE, p, 100), cov, rows, 0.9);
  ASSERT_EQ(ci.size(), 4u);
  const double z = 1.6448536269514722;
  EXPECT_EQ(ci[2].name, "lower[1]");
  EXPECT_NEAR(ci[2].estimate, 0.1, 1e-15);
  EXPECT_NEAR(ci[2].upper - ci[2].estimate, z * std::sqrt(0.0004 + 0.0009 - 0.0002), 1e-14);
  EXPECT_FALSE(ci[2].truncated);
  EXPECT_EQ(ci[3].upper, 1.0);  // 0.95 + z * sqrt(0.0017)
  EXPECT_TRUE(ci[3].truncated);
  EXPECT_EQ(ci[3].level, 0.9);
}

TEST(Wald, VarianceRounding) {
  const ItemParameters p{Vector{{0.0, 1.5}}, Vector{{0.25}}, Vector{{0.9}}};
  CovarianceEstimate cov;
  cov.matrix = Matrix::Zero(4, 4);
  cov.matrix(0, 0) = -1e-9;
  const auto ci = wald_intervals(pretend(Method::MLE, p, 100), cov);
  EXPECT_EQ(ci[0].lower, 0.0);
  EXPECT_EQ(ci[0].upper, 0.0);
  cov.matrix(0, 0) = -1e-6;
  EXPECT_THROW(wald_intervals(pretend(Method::MLE, p, 100), cov), InferenceError);
  cov.matrix(0, 0) = 0.0;
  EXPECT_THROW(wald_intervals(pretend(Method::MLE, p, 100), cov, 1.0), InferenceError);
}

// -- likelihood-ratio test --------------------------------------------------------------

namespace {
const ItemParameters kSimple{Vector{{0.0, 1.5}}, Vector{{0.25}}, Vector{{0.9}}};
const ItemParameters kGroup{Vector{{0.0, 1.5, 0.0, 0.0}}, Vector{{0.25, 0.0}}, Vector{{0.9, 0.0}}};
}  // namespace

TEST(Lrt, HandValue) {
  const auto res = lrt_dif(pretend(Method::MLE, kSimple, 500, -100.0), pretend(Method::MLE, kGroup, 500, -95.256));
  EXPECT_EQ(res.df, 4);
  EXPECT_NEAR(res.statistic, 9.488, 1e-12);
  EXPECT_NEAR(res.p_value, 0.04999440557799463, 1e-12);
  EXPECT_TRUE(res.flagged);
  EXPECT_FALSE(res.boundary_warning);
}

TEST(Lrt, EqualAndNegative) {
  auto res = lrt_dif(pretend(Method::EM, kSimple, 500, -100.0), pretend(Method::EM, kGroup, 500, -100.0));
  EXPECT_EQ(res.p_value, 1.0);
  EXPECT_FALSE(res.flagged);
  res = lrt_dif(pretend(Method::EM, kSimple, 500, -100.0), pretend(Method::EM, kGroup, 500, -100.5));
  EXPECT_TRUE(res.negative_statistic);
  EXPECT_EQ(res.raw_statistic, -1.0);
  EXPECT_EQ(res.statistic, 0.0);
  EXPECT_EQ(res.p_value, 1.0);
}

TEST(Lrt, BoundaryWarningAccompaniesFlag) {
  auto g = pretend(Method::MLE, kGroup, 500, -50.0);
  g.boundary_slack = 5e-5;
  auto res = lrt_dif(pretend(Method::MLE, kSimple, 500, -100.0), g);
  EXPECT_LT(res.p_value, 1e-10);
  EXPECT_TRUE(res.boundary_warning);
  EXPECT_TRUE(res.flagged);
  g.boundary_slack = 1e-4;
  res = lrt_dif(pretend(Method::MLE, kSimple, 500, -100.0), g);
  EXPECT_FALSE(res.boundary_warning);
  auto s = pretend(Method::MLE, kSimple, 500, -100.0);
  s.boundary_slack = 0.0;
  EXPECT_TRUE(lrt_dif(s, pretend(Method::MLE, kGroup, 500, -99.0)).boundary_warning);
}

TEST(Lrt, Preconditions) {
  const auto s = pretend(Method::MLE, kSimple, 500, -100.0);
  EXPECT_THROW(lrt_dif(s, pretend(Method::EM, kGroup, 500, -99.0)), InferenceError);
  EXPECT_THROW(lrt_dif(s, pretend(Method::MLE, kGroup, 499, -99.0)), InferenceError);
  EXPECT_THROW(lrt_dif(s, pretend(Method::MLE, kSimple, 500, -99.0)), InferenceError);
  auto dnf = pretend(Method::MLE, kGroup, 500, -99.0);
  dnf.status = ConvergenceStatus::DidNotFinish;
  EXPECT_THROW(lrt_dif(s, dnf), InferenceError);
  EXPECT_THROW(lrt_dif(s, pretend(Method::MLE, kGroup, 500, -99.0), 0.0), InferenceError);
}

TEST(Lrt, ChiSquareTailClosedForms) {
  fourpl::testing::Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    const double x = fourpl::testing::uniform(rng, 0.01, 40.0);
    EXPECT_NEAR(chi_square_upper_tail(x, 2), std::exp(-x / 2), 1e-14);
    EXPECT_NEAR(chi_square_upper_tail(x, 4), std::exp(-x / 2) * (1 + x / 2), 1e-14);
  }
  EXPECT_EQ(chi_square_upper_tail(0.0, 4), 1.0);
  EXPECT_THROW(chi_square_upper_tail(1.0, 0), InferenceError);
}

TEST(Lrt, FittedPairUsesParameterCountDifference) {
  const auto d = generate_dataset(TrueParameters::group_default(), ModelKind::GroupSpecific, 600, 12);
  Dataset s;
  s.y = d.y;
  s.x = d.x.leftCols(2);
  s.z = d.z.leftCols(1);
  const auto fs = fitted(Method::MLE, s, ModelKind::Simple);
  const auto fg = fitted(Method::MLE, d, ModelKind::GroupSpecific);
  ASSERT_TRUE(fs.converged());
  ASSERT_TRUE(fg.converged());
  const auto res = lrt_dif(fs, fg);
  EXPECT_EQ(res.df, 4);
  EXPECT_GE(res.raw_statistic, -1e-6);
  EXPECT_NEAR(res.statistic, 2.0 * (fg.log_likelihood - fs.log_likelihood), 1e-9);
}

TEST(Lrt, DependsOnlyOnLogLikelihoods) {
  const ItemParameters other{Vector{{2.0, -0.5}}, Vector{{0.1}}, Vector{{0.6}}};
  const ItemParameters other_group{Vector{{1.0, 0.5, 0.3, -0.2}}, Vector{{0.1, 0.05}}, Vector{{0.6, -0.1}}};
  const auto a = lrt_dif(pretend(Method::PLF, kSimple, 800, -321.5), pretend(Method::PLF, kGroup, 800, -317.0));
  const auto b = lrt_dif(pretend(Method::PLF, other, 800, -321.5), pretend(Method::PLF, other_group, 800, -317.0));
  EXPECT_EQ(a.statistic, b.statistic);
  EXPECT_EQ(a.p_value, b.p_value);
  EXPECT_EQ(a.flagged, b.flagged);
}

TEST(Wald, ZeroStandardErrorGivesDegenerateInterval) {
  CovarianceEstimate cov;
  cov.matrix = Matrix::Zero(4, 4);
  const auto ci = wald_intervals(pretend(Method::MLE, kSimple, 100), cov);
  for (std::size_t k = 0; k < ci.size(); ++k) {
    EXPECT_EQ(ci[k].lower, ci[k].estimate);
    EXPECT_EQ(ci[k].upper, ci[k].estimate);
  }
}

TEST(Wald, UpperOffsetHandValue) {
  ItemParameters p = kGroup;
  p.d[1] = 0.06;
  CovarianceEstimate cov;
  cov.matrix = Matrix::Zero(8, 8);
  cov.matrix(7, 7) = 0.25 * 0.25;
  const auto ci = wald_intervals(pretend(Method::MLE, p, 100), cov);
  EXPECT_NEAR(ci[7].lower, -0.43, 5e-3);
  EXPECT_NEAR(ci[7].upper, 0.55, 5e-3);
  EXPECT_NEAR(ci[7].lower, 0.06 - 1.959963984540054 * 0.25, 1e-14);
  EXPECT_FALSE(ci[7].truncated);
}

TEST(Covariance, LogisticBlockEqualsIrlsInformation) {
  fourpl::testing::Rng rng(21);
  const ItemParameters truth{Vector{{0.3, 1.2}}, Vector{{0.0}}, Vector{{1.0}}};
  const auto d = fourpl::testing::random_dataset(rng, truth, ModelKind::Simple, 500);
  const ItemParameters at{Vector{{-0.2, 0.8}}, Vector{{0.0}}, Vector{{1.0}}};
  const Matrix h = log_likelihood_hessian(at, d);
  Matrix info = Matrix::Zero(2, 2);
  for (Index i = 0; i < d.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-d.x.row(i).dot(at.b)));
    info += p * (1.0 - p) * d.x.row(i).transpose() * d.x.row(i);
  }
  EXPECT_LT((-h.topLeftCorner(2, 2) - info).cwiseAbs().maxCoeff(), 1e-6 * info.cwiseAbs().maxCoeff());
}

TEST(Wald, WidthShrinksAsRootN) {
  // median width over replications; consecutive sizes differ by a factor 4
  const std::vector<Index> sizes{500, 2000, 8000};
  std::vector<Vector> width;
  for (Index n : sizes) {
    std::vector<std::vector<double>> w(4);
    for (std::uint64_t rep = 0; rep < 40; ++rep) {
      const auto d = generate_dataset(TrueParameters::simple_default(), ModelKind::Simple, n, 3, rep);
      const auto r = fitted(Method::MLE, d, ModelKind::Simple);
      if (!r.converged()) continue;
      const auto ci = wald_intervals(r, default_covariance(r, d));
      for (std::size_t k = 0; k < 4; ++k) w[k].push_back(ci[k].upper - ci[k].lower);
    }
    Vector med(4);
    for (std::size_t k = 0; k < 4; ++k) {
      ASSERT_GE(w[k].size(), 35u);
      std::nth_element(w[k].begin(), w[k].begin() + w[k].size() / 2, w[k].end());
      med[static_cast<Index>(k)] = w[k][w[k].size() / 2];
    }
    width.push_back(med);
  }
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
    for (Index k = 0; k < 4; ++k)
      EXPECT_NEAR(width[i][k] / width[i + 1][k] / 2.0, 1.0, 0.15) << "n=" << sizes[i] << " parameter " << k;
}
