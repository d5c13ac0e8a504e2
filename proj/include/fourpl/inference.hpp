#pragma once

// Standard errors, Wald intervals and the nested-model likelihood-ratio
// test for differential item functioning.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <Eigen/Dense>

#include "estimators.hpp"
#include "model.hpp"
#include "optimize.hpp"

namespace fourpl {

class InferenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class CovarianceKind { Sandwich, ObservedInformation };

inline std::string_view to_string(CovarianceKind k) {
  return k == CovarianceKind::Sandwich ? "sandwich" : "observed_information";
}

struct CovarianceEstimate {
  Matrix matrix;  // gamma order (b, c, d)
  CovarianceKind kind = CovarianceKind::ObservedInformation;
  Index active_constraints = 0;  // asymptote constraints treated as fixed
};

/// Condition number above which a matrix is treated as singular.
inline constexpr double kMaxCondition = 1e12;

/// Constraint slack at or below which a constraint counts as active.
inline constexpr double kActiveSlack = 1e-8;

namespace detail {

/// Inverse of a symmetric matrix. With `positive` the matrix must also be
/// positive definite.
inline Matrix symmetric_inverse(const Matrix& m, std::string_view what, bool positive) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) throw InferenceError(std::string(what) + ": eigen decomposition failed");
  const Vector ev = eig.eigenvalues();
  const double largest = ev.cwiseAbs().maxCoeff();
  const double smallest = ev.cwiseAbs().minCoeff();
  if (!(largest > 0.0) || !std::isfinite(largest) || smallest * kMaxCondition < largest)
    throw InferenceError(std::string(what) + " is singular");
  if (positive && ev.minCoeff() <= 0.0) throw InferenceError(std::string(what) + " is not positive definite");
  const Matrix inv = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (inv + inv.transpose());
}

inline void require_converged(const FitResult& fit, const Dataset& data) {
  if (!fit.converged()) throw InferenceError("covariance requires a converged fit");
  if (fit.params.b.size() != data.x.cols() || fit.params.c.size() != data.z.cols())
    throw InferenceError("fit does not match the dataset design");
}

/// Orthonormal basis of directions that keep every active asymptote
/// constraint active. Identity when the estimate is interior.
inline Matrix free_directions(const ItemParameters& params, const Dataset& data, Index& active_count) {
  const Index kb = params.b.size();
  const Index dim = params.size();
  const auto cons = asymptote_constraints(unique_rows(data.z), kb, dim);
  const Vector slack = cons.slack(params.pack());
  std::vector<Index> rows;
  for (Index i = 0; i < cons.size(); ++i)
    if (slack[i] <= kActiveSlack) rows.push_back(i);
  active_count = static_cast<Index>(rows.size());
  if (rows.empty()) return Matrix::Identity(dim, dim);
  Matrix active(active_count, dim);
  for (Index r = 0; r < active_count; ++r) active.row(r) = cons.a.row(rows[static_cast<std::size_t>(r)]);
  Eigen::ColPivHouseholderQR<Matrix> qr(active.transpose());
  const Matrix q = qr.householderQ();
  return q.rightCols(dim - qr.rank());
}

}  // namespace detail

/// Robust covariance of the least-squares estimator, (1/n) G^-1 S G^-1 with
/// G the mean Hessian of the per-respondent loss and S the mean outer
/// product of per-respondent gradients. Directions fixed by active
/// asymptote constraints get zero variance.
inline CovarianceEstimate sandwich_covariance(const FitResult& fit, const Dataset& data,
                                              bool weighted = false) {
  if (fit.method != Method::NLS) throw InferenceError("sandwich covariance applies to NLS fits");
  detail::require_converged(fit, data);
  weighted = weighted || fit.objective_label == "weighted_rss";

  const auto ev = evaluate(fit.params, data);
  const Eigen::ArrayXd r = data.y.array() - ev.pi;
  Eigen::ArrayXd first, second;
  if (!weighted) {
    first = -2.0 * r;
    second = Eigen::ArrayXd::Constant(r.size(), 2.0);
  } else {
    const Eigen::ArrayXd v = ev.pi * (1.0 - ev.pi);
    if ((v < kProbabilityClamp).any()) throw InferenceError("degenerate weight at the estimate");
    const Eigen::ArrayXd dv = 1.0 - 2.0 * ev.pi;
    first = -2.0 * r / v - r * r * dv / (v * v);
    second = 2.0 / v + 4.0 * r * dv / (v * v) + 2.0 * r * r / (v * v) +
             2.0 * r * r * dv * dv / (v * v * v);
  }
  const double n = static_cast<double>(data.size());
  const Matrix gamma = composite_hessian(fit.params, data, ev, first, second) / n;
  const Matrix jac = prob_jacobian(fit.params, data, ev);
  const Matrix sigma = jac.transpose() * (jac.array().colwise() * (first * first)).matrix() / n;

  CovarianceEstimate out;
  out.kind = CovarianceKind::Sandwich;
  const Matrix basis = detail::free_directions(fit.params, data, out.active_constraints);
  const Matrix ginv = detail::symmetric_inverse(basis.transpose() * gamma * basis, "sandwich bread matrix", false);
  const Matrix inner = ginv * (basis.transpose() * sigma * basis) * ginv / n;
  out.matrix = basis * inner * basis.transpose();
  out.matrix = (0.5 * (out.matrix + out.matrix.transpose())).eval();
  return out;
}

/// Inverse of the observed information, the negative log-likelihood Hessian,
/// restricted to directions that keep active asymptote constraints active.
inline CovarianceEstimate observed_information_covariance(const FitResult& fit, const Dataset& data) {
  if (fit.method == Method::NLS) throw InferenceError("observed information applies to likelihood fits");
  detail::require_converged(fit, data);
  const Matrix info = -log_likelihood_hessian(fit.params, data);
  CovarianceEstimate out;
  out.kind = CovarianceKind::ObservedInformation;
  const Matrix basis = detail::free_directions(fit.params, data, out.active_constraints);
  const Matrix inv = detail::symmetric_inverse(basis.transpose() * info * basis, "observed information", true);
  out.matrix = basis * inv * basis.transpose();
  out.matrix = (0.5 * (out.matrix + out.matrix.transpose())).eval();
  return out;
}

/// NLS pairs with the sandwich, the likelihood methods with observed information.
inline CovarianceEstimate default_covariance(const FitResult& fit, const Dataset& data) {
  return fit.method == Method::NLS ? sandwich_covariance(fit, data) : observed_information_covariance(fit, data);
}

// ---------------------------------------------------------------------------
// Wald intervals

struct ConfidenceInterval {
  std::string name;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  bool truncated = false;
};

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

namespace detail {

inline double checked_variance(double v) {
  if (v < -1e-8) throw InferenceError("negative variance " + std::to_string(v));
  return std::max(v, 0.0);
}

inline ConfidenceInterval wald(std::string name, double est, double var, double level, bool probability) {
  if (!(level > 0.0 && level < 1.0)) throw InferenceError("level must be in (0, 1)");
  const double half = normal_quantile(0.5 * (1.0 + level)) * std::sqrt(checked_variance(var));
  ConfidenceInterval ci{std::move(name), est, est - half, est + half, level, false};
  if (probability) {
    const double lo = std::clamp(ci.lower, 0.0, 1.0);
    const double hi = std::clamp(ci.upper, 0.0, 1.0);
    ci.truncated = lo != ci.lower || hi != ci.upper;
    ci.lower = lo;
    ci.upper = hi;
  }
  return ci;
}

}  // namespace detail

/// estimate +- z * SE for every parameter. The intercepts of c and d are
/// probabilities and are truncated to [0, 1]; offsets are left as they are.
inline std::vector<ConfidenceInterval> wald_intervals(const FitResult& fit, const CovarianceEstimate& cov,
                                                      double level = 0.95,
                                                      const std::vector<std::string>& names = {}) {
  const Vector gamma = fit.params.pack();
  const Index kb = fit.params.b.size(), kz = fit.params.c.size();
  if (cov.matrix.rows() != gamma.size() || cov.matrix.cols() != gamma.size())
    throw InferenceError("covariance does not match the parameter dimension");
  std::vector<ConfidenceInterval> out;
  for (Index k = 0; k < gamma.size(); ++k) {
    const bool probability = k == kb || k == kb + kz;
    std::string name = k < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(k)]
                                                            : "theta" + std::to_string(k);
    out.push_back(detail::wald(std::move(name), gamma[k], cov.matrix(k, k), level, probability));
  }
  return out;
}

/// Intervals for Z.c and Z.d at the given asymptote rows, always truncated to [0, 1].
inline std::vector<ConfidenceInterval> asymptote_intervals(const FitResult& fit, const CovarianceEstimate& cov,
                                                           const Matrix& z_rows, double level = 0.95) {
  const Index kb = fit.params.b.size(), kz = fit.params.c.size();
  if (z_rows.cols() != kz) throw InferenceError("asymptote rows do not match the design");
  std::vector<ConfidenceInterval> out;
  for (Index r = 0; r < z_rows.rows(); ++r) {
    const Vector z = z_rows.row(r).transpose();
    const Matrix cc = cov.matrix.block(kb, kb, kz, kz);
    const Matrix dd = cov.matrix.block(kb + kz, kb + kz, kz, kz);
    out.push_back(detail::wald("lower[" + std::to_string(r) + "]", z.dot(fit.params.c), z.dot(cc * z),
                               level, true));
    out.push_back(detail::wald("upper[" + std::to_string(r) + "]", z.dot(fit.params.d), z.dot(dd * z),
                               level, true));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Likelihood-ratio test

/// Slack below which an asymptote estimate counts as sitting on the boundary.
inline constexpr double kBoundarySlack = 1e-4;

struct DifTestResult {
  double statistic = 0.0;      // clamped at 0
  double raw_statistic = 0.0;  // 2 (ll_group - ll_simple) before clamping
  int df = 0;
  double p_value = 1.0;
  double alpha = 0.05;
  bool flagged = false;
  bool negative_statistic = false;
  bool boundary_warning = false;  // some asymptote within kBoundarySlack of its bound
};

inline double chi_square_upper_tail(double statistic, int df) {
  if (df < 1) throw InferenceError("degrees of freedom must be positive");
  if (statistic <= 0.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), statistic));
}

/// 2 (ll_group - ll_simple) against chi-square with the difference in
/// parameter counts as degrees of freedom.
inline DifTestResult lrt_dif(const FitResult& fit_simple, const FitResult& fit_group, double alpha = 0.05) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InferenceError("alpha must be in (0, 1)");
  if (!fit_simple.converged() || !fit_group.converged()) throw InferenceError("both fits must have converged");
  if (fit_simple.method != fit_group.method) throw InferenceError("fits use different methods");
  if (fit_simple.respondents != fit_group.respondents) throw InferenceError("fits use different respondent counts");
  if (!std::isfinite(fit_simple.log_likelihood) || !std::isfinite(fit_group.log_likelihood))
    throw InferenceError("non-finite log-likelihood");
  DifTestResult res;
  res.alpha = alpha;
  res.df = static_cast<int>(fit_group.params.size() - fit_simple.params.size());
  if (res.df < 1) throw InferenceError("group model must have more parameters than the simple model");
  res.raw_statistic = 2.0 * (fit_group.log_likelihood - fit_simple.log_likelihood);
  res.negative_statistic = res.raw_statistic < 0.0;
  res.statistic = std::max(0.0, res.raw_statistic);
  res.p_value = chi_square_upper_tail(res.statistic, res.df);
  res.boundary_warning = fit_simple.boundary_slack < kBoundarySlack || fit_group.boundary_slack < kBoundarySlack;
  res.flagged = res.p_value < alpha;
  return res;
}

}  // namespace fourpl
