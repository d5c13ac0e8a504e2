#pragma once

// Covariate-specific four-parameter logistic (4PL) item model:
//
//   pi = Z.c + (Z.d - Z.c) * phi,   phi = logistic(X.b)
//
// Parameters are always laid out as gamma = (b..., c..., d...).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace fourpl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Interior margin kept between the asymptotes and the [0, 1] boundary.
inline constexpr double kAsymptoteMargin = 1e-6;
/// Probabilities are clamped to [kProbabilityClamp, 1 - kProbabilityClamp] before logs.
inline constexpr double kProbabilityClamp = 1e-12;

class ModelError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Raw tables and model layouts

/// Column-oriented numeric table with named columns.
struct Table {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }

  const std::vector<double>* find(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return &columns[i];
    return nullptr;
  }

  const std::vector<double>& column(std::string_view name) const {
    if (const auto* col = find(name)) return *col;
    throw ModelError("missing column: " + std::string(name));
  }

  void add(std::string name, std::vector<double> values) {
    if (find(name)) throw ModelError("duplicate column: " + name);
    if (!columns.empty() && values.size() != rows())
      throw ModelError("column length mismatch: " + name);
    names.push_back(std::move(name));
    columns.push_back(std::move(values));
  }
};

enum class ModelKind { Simple, GroupSpecific, General };

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Simple: return "simple";
    case ModelKind::GroupSpecific: return "group";
    case ModelKind::General: return "general";
  }
  return "unknown";
}

/// Which raw columns feed the predictor design X and the asymptote design Z.
///
/// Simple:        X = (1, x),            Z = (1)
/// GroupSpecific: X = (1, x, g, g*x),    Z = (1, g)
/// General:       X = (1, predictors...), Z = (1, asymptote covariates...)
///
/// For Simple and GroupSpecific the first predictor column is the matching
/// criterion and, for GroupSpecific, the second is the 0/1 group indicator.
struct ModelSpec {
  ModelKind kind = ModelKind::Simple;
  std::string response = "y";
  std::vector<std::string> predictor_columns{"x"};
  std::vector<std::string> asymptote_columns{};

  static ModelSpec simple(std::string criterion = "x", std::string response = "y") {
    return {ModelKind::Simple, std::move(response), {std::move(criterion)}, {}};
  }

  static ModelSpec group_specific(std::string criterion = "x", std::string group = "g",
                                  std::string response = "y") {
    return {ModelKind::GroupSpecific, std::move(response), {std::move(criterion), group}, {group}};
  }

  Index predictor_size() const {
    switch (kind) {
      case ModelKind::Simple: return 2;
      case ModelKind::GroupSpecific: return 4;
      case ModelKind::General: return 1 + static_cast<Index>(predictor_columns.size());
    }
    return 0;
  }

  Index asymptote_size() const {
    switch (kind) {
      case ModelKind::Simple: return 1;
      case ModelKind::GroupSpecific: return 2;
      case ModelKind::General: return 1 + static_cast<Index>(asymptote_columns.size());
    }
    return 0;
  }

  Index parameter_count() const { return predictor_size() + 2 * asymptote_size(); }

  /// Names in gamma order.
  std::vector<std::string> parameter_names() const {
    switch (kind) {
      case ModelKind::Simple: return {"b0", "b1", "c", "d"};
      case ModelKind::GroupSpecific:
        return {"b0", "b1", "b2", "b3", "c", "c_dif", "d", "d_dif"};
      case ModelKind::General: break;
    }
    std::vector<std::string> names;
    for (Index j = 0; j < predictor_size(); ++j) names.push_back("b" + std::to_string(j));
    for (Index j = 0; j < asymptote_size(); ++j) names.push_back("c" + std::to_string(j));
    for (Index j = 0; j < asymptote_size(); ++j) names.push_back("d" + std::to_string(j));
    return names;
  }
};

// ---------------------------------------------------------------------------
// Dataset and parameters

/// One item's responses with the two design matrices.
struct Dataset {
  Vector y;
  Matrix x;  // n x kb, first column 1
  Matrix z;  // n x kz, first column 1

  Index size() const { return y.size(); }

  void validate() const {
    const Index n = y.size();
    if (n < 1) throw ModelError("empty dataset");
    if (x.rows() != n || z.rows() != n) throw ModelError("design rows do not match responses");
    if (x.cols() < 1 || z.cols() < 1) throw ModelError("design without intercept column");
    for (Index p = 0; p < n; ++p) {
      if (y[p] != 0.0 && y[p] != 1.0) throw ModelError("response is not binary 0/1");
      if (x(p, 0) != 1.0 || z(p, 0) != 1.0) throw ModelError("first design column must be 1");
    }
    if (!x.allFinite() || !z.allFinite()) throw ModelError("non-finite design entry");
  }

  /// Matching criterion (second predictor column) when present.
  Vector criterion() const {
    if (x.cols() < 2) throw ModelError("design has no matching criterion column");
    return x.col(1);
  }
};

struct ItemParameters {
  Vector b;
  Vector c;
  Vector d;

  Index size() const { return b.size() + c.size() + d.size(); }

  Vector pack() const {
    Vector gamma(size());
    gamma << b, c, d;
    return gamma;
  }

  static ItemParameters unpack(const Vector& gamma, Index kb, Index kz) {
    if (gamma.size() != kb + 2 * kz) throw ModelError("parameter vector has wrong length");
    return {gamma.head(kb), gamma.segment(kb, kz), gamma.tail(kz)};
  }

  static ItemParameters zeros(const ModelSpec& spec) {
    return {Vector::Zero(spec.predictor_size()), Vector::Zero(spec.asymptote_size()),
            Vector::Zero(spec.asymptote_size())};
  }

  friend bool operator==(const ItemParameters& lhs, const ItemParameters& rhs) {
    auto same = [](const Vector& a, const Vector& b) {
      return a.size() == b.size() && (a.array() == b.array()).all();
    };
    return same(lhs.b, rhs.b) && same(lhs.c, rhs.c) && same(lhs.d, rhs.d);
  }
};

struct ProbabilityComponents {
  double phi = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double pi = 0.0;
};

// ---------------------------------------------------------------------------
// Design construction

namespace detail {

inline void require_binary(const std::vector<double>& v, std::string_view name) {
  for (double value : v)
    if (value != 0.0 && value != 1.0)
      throw ModelError("column '" + std::string(name) + "' is not binary 0/1");
}

}  // namespace detail

/// Builds the X/Z designs for `spec` from named raw columns.
inline Dataset build_design(const ModelSpec& spec, const Table& raw) {
  // Resolve every referenced column before touching data.
  const auto& y = raw.column(spec.response);
  std::vector<const std::vector<double>*> predictors;
  for (const auto& name : spec.predictor_columns) predictors.push_back(&raw.column(name));
  std::vector<const std::vector<double>*> asymptotes;
  for (const auto& name : spec.asymptote_columns) asymptotes.push_back(&raw.column(name));

  if (spec.kind == ModelKind::Simple && predictors.size() != 1)
    throw ModelError("simple model takes exactly one predictor column");
  if (spec.kind == ModelKind::GroupSpecific &&
      (predictors.size() != 2 || asymptotes.size() != 1 ||
       spec.asymptote_columns[0] != spec.predictor_columns[1]))
    throw ModelError("group-specific model takes (criterion, group) with group as asymptote covariate");

  const auto n = static_cast<Index>(raw.rows());
  if (n == 0) throw ModelError("empty table");
  detail::require_binary(y, spec.response);

  Dataset data;
  data.y = Eigen::Map<const Vector>(y.data(), n);
  data.x.resize(n, spec.predictor_size());
  data.z.resize(n, spec.asymptote_size());
  data.x.col(0).setOnes();
  data.z.col(0).setOnes();

  if (spec.kind == ModelKind::GroupSpecific) {
    const auto& x = *predictors[0];
    const auto& g = *predictors[1];
    detail::require_binary(g, spec.predictor_columns[1]);
    for (Index p = 0; p < n; ++p) {
      data.x(p, 1) = x[p];
      data.x(p, 2) = g[p];
      data.x(p, 3) = g[p] * x[p];
      data.z(p, 1) = g[p];
    }
  } else {
    for (std::size_t j = 0; j < predictors.size(); ++j)
      data.x.col(static_cast<Index>(j) + 1) =
          Eigen::Map<const Vector>(predictors[j]->data(), n);
    for (std::size_t j = 0; j < asymptotes.size(); ++j)
      data.z.col(static_cast<Index>(j) + 1) =
          Eigen::Map<const Vector>(asymptotes[j]->data(), n);
  }
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Probability kernels

inline double logistic(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

namespace detail {

inline void check_row_sizes(const ItemParameters& params, Index x_len, Index z_len) {
  if (params.b.size() != x_len || params.c.size() != z_len || params.d.size() != z_len)
    throw ModelError("row length does not match parameters");
}

inline void check_asymptote_range(double lower, double upper) {
  if (!(lower >= 0.0 && lower <= 1.0 && upper >= 0.0 && upper <= 1.0))
    throw ModelError("asymptote outside [0, 1]");
}

}  // namespace detail

template <class XRow, class ZRow>
ProbabilityComponents predict_prob(const ItemParameters& params, const XRow& x_row,
                                   const ZRow& z_row) {
  detail::check_row_sizes(params, x_row.size(), z_row.size());
  ProbabilityComponents out;
  out.phi = logistic(x_row.dot(params.b));
  out.lower = z_row.dot(params.c);
  out.upper = z_row.dot(params.d);
  detail::check_asymptote_range(out.lower, out.upper);
  out.pi = out.lower + (out.upper - out.lower) * out.phi;
  return out;
}

/// d pi / d gamma for one respondent, gamma ordered (b, c, d).
template <class XRow, class ZRow>
Vector grad_prob(const ItemParameters& params, const XRow& x_row, const ZRow& z_row) {
  const auto comp = predict_prob(params, x_row, z_row);
  const Index kb = params.b.size();
  const Index kz = params.c.size();
  Vector g(kb + 2 * kz);
  g.head(kb) = (comp.upper - comp.lower) * comp.phi * (1.0 - comp.phi) * x_row.transpose();
  g.segment(kb, kz) = (1.0 - comp.phi) * z_row.transpose();
  g.tail(kz) = comp.phi * z_row.transpose();
  return g;
}

/// Second derivatives of pi for one respondent. Only the b-b and b-(c,d)
/// blocks are nonzero because pi is linear in c and d.
template <class XRow, class ZRow>
Matrix hess_prob(const ItemParameters& params, const XRow& x_row, const ZRow& z_row) {
  const auto comp = predict_prob(params, x_row, z_row);
  const Index kb = params.b.size();
  const Index kz = params.c.size();
  const double s = comp.phi * (1.0 - comp.phi);
  Matrix h = Matrix::Zero(kb + 2 * kz, kb + 2 * kz);
  const Vector xr = x_row.transpose();
  const Vector zr = z_row.transpose();
  h.topLeftCorner(kb, kb) = (comp.upper - comp.lower) * s * (1.0 - 2.0 * comp.phi) * xr * xr.transpose();
  h.block(0, kb, kb, kz) = -s * xr * zr.transpose();
  h.block(0, kb + kz, kb, kz) = s * xr * zr.transpose();
  h.block(kb, 0, kz, kb) = h.block(0, kb, kb, kz).transpose();
  h.block(kb + kz, 0, kz, kb) = h.block(0, kb + kz, kb, kz).transpose();
  return h;
}

/// Vectorised components over a whole dataset.
struct ModelEvaluation {
  Eigen::ArrayXd phi;
  Eigen::ArrayXd lower;
  Eigen::ArrayXd upper;
  Eigen::ArrayXd pi;
};

inline ModelEvaluation evaluate(const ItemParameters& params, const Dataset& data) {
  detail::check_row_sizes(params, data.x.cols(), data.z.cols());
  ModelEvaluation ev;
  const Eigen::ArrayXd eta = (data.x * params.b).array();
  ev.phi = eta.unaryExpr([](double e) { return logistic(e); });
  ev.lower = (data.z * params.c).array();
  ev.upper = (data.z * params.d).array();
  if (!((ev.lower >= 0.0).all() && (ev.lower <= 1.0).all() && (ev.upper >= 0.0).all() &&
        (ev.upper <= 1.0).all()))
    throw ModelError("asymptote outside [0, 1]");
  ev.pi = ev.lower + (ev.upper - ev.lower) * ev.phi;
  return ev;
}

/// Jacobian d pi_p / d gamma as an n x dim(gamma) matrix.
inline Matrix prob_jacobian(const ItemParameters& params, const Dataset& data,
                            const ModelEvaluation& ev) {
  const Index kb = params.b.size();
  const Index kz = params.c.size();
  Matrix j(data.size(), kb + 2 * kz);
  const Eigen::ArrayXd slope = (ev.upper - ev.lower) * ev.phi * (1.0 - ev.phi);
  j.leftCols(kb) = data.x.array().colwise() * slope;
  j.middleCols(kb, kz) = data.z.array().colwise() * (1.0 - ev.phi);
  j.rightCols(kz) = data.z.array().colwise() * ev.phi;
  return j;
}

/// Residual sum of squares; `weighted` divides each term by pi(1 - pi).
inline double rss(const ItemParameters& params, const Dataset& data, bool weighted = false) {
  const auto ev = evaluate(params, data);
  const Eigen::ArrayXd r = data.y.array() - ev.pi;
  if (!weighted) return (r * r).sum();
  const Eigen::ArrayXd v = ev.pi * (1.0 - ev.pi);
  if ((v < kProbabilityClamp).any()) throw ModelError("degenerate weight: pi is numerically 0 or 1");
  return (r * r / v).sum();
}

inline double log_likelihood(const ModelEvaluation& ev, const Vector& y) {
  const Eigen::ArrayXd p = ev.pi.unaryExpr([](double v) { return clamp_probability(v); });
  const Eigen::ArrayXd yy = y.array();
  return (yy * p.log() + (1.0 - yy) * (1.0 - p).log()).sum();
}

inline double log_likelihood(const ItemParameters& params, const Dataset& data) {
  return log_likelihood(evaluate(params, data), data.y);
}

/// Analytic gradient of the log-likelihood in gamma order.
inline Vector log_likelihood_gradient(const ItemParameters& params, const Dataset& data) {
  const auto ev = evaluate(params, data);
  const Eigen::ArrayXd p = ev.pi.unaryExpr([](double v) { return clamp_probability(v); });
  const Eigen::ArrayXd score = (data.y.array() - p) / (p * (1.0 - p));
  return prob_jacobian(params, data, ev).transpose() * score.matrix();
}

/// Sum over respondents of  second_p * dpi dpi' + first_p * d2pi,
/// the Hessian of sum_p loss(pi_p) when first/second are loss'(pi), loss''(pi).
inline Matrix composite_hessian(const ItemParameters& params, const Dataset& data,
                                const ModelEvaluation& ev, const Eigen::ArrayXd& first,
                                const Eigen::ArrayXd& second) {
  const Index kb = params.b.size();
  const Index kz = params.c.size();
  const Matrix jac = prob_jacobian(params, data, ev);
  Matrix h = jac.transpose() * (jac.array().colwise() * second).matrix();

  const Eigen::ArrayXd s = ev.phi * (1.0 - ev.phi);
  const Eigen::ArrayXd wbb = first * (ev.upper - ev.lower) * s * (1.0 - 2.0 * ev.phi);
  const Eigen::ArrayXd wbc = first * s;
  h.topLeftCorner(kb, kb) += data.x.transpose() * (data.x.array().colwise() * wbb).matrix();
  const Matrix xz = data.x.transpose() * (data.z.array().colwise() * wbc).matrix();
  h.block(0, kb, kb, kz) -= xz;
  h.block(kb, 0, kz, kb) -= xz.transpose();
  h.block(0, kb + kz, kb, kz) += xz;
  h.block(kb + kz, 0, kz, kb) += xz.transpose();
  return h;
}

/// Analytic Hessian of the log-likelihood in gamma order.
inline Matrix log_likelihood_hessian(const ItemParameters& params, const Dataset& data) {
  const auto ev = evaluate(params, data);
  const Eigen::ArrayXd p = ev.pi.unaryExpr([](double v) { return clamp_probability(v); });
  const Eigen::ArrayXd y = data.y.array();
  const Eigen::ArrayXd first = (y - p) / (p * (1.0 - p));
  const Eigen::ArrayXd second = -(y / (p * p) + (1.0 - y) / ((1.0 - p) * (1.0 - p)));
  return composite_hessian(params, data, ev, first, second);
}

// ---------------------------------------------------------------------------
// Interior constraint on the asymptotes

/// Distinct rows of the asymptote design, in lexicographic order.
inline Matrix unique_rows(const Matrix& z) {
  std::vector<Index> order(static_cast<std::size_t>(z.rows()));
  for (Index i = 0; i < z.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
  auto less = [&](Index a, Index b) {
    for (Index j = 0; j < z.cols(); ++j) {
      if (z(a, j) < z(b, j)) return true;
      if (z(a, j) > z(b, j)) return false;
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  std::vector<Index> keep;
  for (Index idx : order)
    if (keep.empty() || less(keep.back(), idx)) keep.push_back(idx);
  Matrix out(static_cast<Index>(keep.size()), z.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Index>(i)) = z.row(keep[i]);
  return out;
}

/// Smallest slack of the interior constraints
///   Z.c >= eps,  Z.d <= 1 - eps,  Z.d - Z.c >= eps
/// over the given asymptote rows. Nonnegative means interior.
inline double interior_slack(const ItemParameters& params, const Matrix& z_rows) {
  const Eigen::ArrayXd lower = (z_rows * params.c).array();
  const Eigen::ArrayXd upper = (z_rows * params.d).array();
  const double a = (lower - kAsymptoteMargin).minCoeff();
  const double b = (1.0 - kAsymptoteMargin - upper).minCoeff();
  const double c = (upper - lower - kAsymptoteMargin).minCoeff();
  return std::min({a, b, c});
}

/// Tolerance for rounding when an iterate sits exactly on a constraint.
inline constexpr double kSlackRounding = 1e-12;

inline bool is_interior(const ItemParameters& params, const Matrix& z_rows) {
  return interior_slack(params, z_rows) >= -kSlackRounding;
}

}  // namespace fourpl
