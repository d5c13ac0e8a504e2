#pragma once

// Four interchangeable fitting algorithms for one item:
//   NLS  - bound-constrained Gauss-Newton on the residual sum of squares
//   MLE  - bound-constrained BFGS on the log-likelihood
//   EM   - expectation/maximisation over four latent response categories
//   PLF  - two-stage alternation under the parametric (asymptote) link
//
// Every fit ends in exactly one ConvergenceStatus; numerical failures are
// reported as Crashed, never thrown.

#include <cmath>
#include <exception>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"
#include "optimize.hpp"

namespace fourpl {

enum class Method { NLS, MLE, EM, PLF };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::NLS: return "nls";
    case Method::MLE: return "mle";
    case Method::EM: return "em";
    case Method::PLF: return "plf";
  }
  return "unknown";
}

inline std::string_view display_name(Method m) {
  switch (m) {
    case Method::NLS: return "NLS";
    case Method::MLE: return "MLE";
    case Method::EM: return "EM";
    case Method::PLF: return "PLF";
  }
  return "?";
}

enum class ConvergenceStatus { Converged, Crashed, DidNotFinish };

inline std::string_view to_string(ConvergenceStatus s) {
  switch (s) {
    case ConvergenceStatus::Converged: return "converged";
    case ConvergenceStatus::Crashed: return "crashed";
    case ConvergenceStatus::DidNotFinish: return "dnf";
  }
  return "unknown";
}

struct FitOptions {
  int max_iterations = 2000;
  double tolerance = 1e-6;
  bool weighted_nls = false;
};

struct FitResult {
  Method method = Method::MLE;
  ConvergenceStatus status = ConvergenceStatus::Crashed;
  int iterations = 0;
  ItemParameters params;
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::string objective_label;  // "rss", "weighted_rss" or "log_likelihood"
  double log_likelihood = std::numeric_limits<double>::quiet_NaN();
  Index respondents = 0;
  /// Smallest slack of the interior asymptote constraints at the estimate.
  double boundary_slack = std::numeric_limits<double>::quiet_NaN();
  std::string message;
  /// Objective after every iteration, value at the initial parameters first.
  std::vector<double> trace;

  bool converged() const { return status == ConvergenceStatus::Converged; }
};

/// Per-respondent expectations of the four latent categories.
struct LatentWeights {
  Vector w1;  // endorsed, determined to (lower asymptote)
  Vector w2;  // endorsed through the logistic part
  Vector w3;  // not endorsed through the logistic part
  Vector w4;  // not endorsed despite trait (upper asymptote)
};

class EstimationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

/// Sub-problem accuracy for the inner maximisations of EM and PLF.
inline MinimizeOptions inner_options() {
  MinimizeOptions o;
  o.max_iterations = 200;
  o.f_tolerance = 1e-11;
  o.x_tolerance = 1e-10;
  o.curvature = Curvature::Supplied;
  return o;
}

struct AsymptoteContext {
  Matrix z_rows;
  LinearConstraints joint;  // on gamma = (b, c, d)
  LinearConstraints pair;   // on (c, d)

  AsymptoteContext(const Dataset& data) : z_rows(unique_rows(data.z)) {
    const Index kb = data.x.cols();
    const Index kz = data.z.cols();
    joint = asymptote_constraints(z_rows, kb, kb + 2 * kz);
    pair = asymptote_constraints(z_rows, 0, 2 * kz);
  }
};

// -- NLS ---------------------------------------------------------------------

struct RssObjective {
  const Dataset& data;
  bool weighted;
  Index kb, kz;

  double value(const Vector& g) const {
    return rss(ItemParameters::unpack(g, kb, kz), data, weighted);
  }

  Vector gradient(const Vector& g) const {
    const auto params = ItemParameters::unpack(g, kb, kz);
    const auto ev = evaluate(params, data);
    const Eigen::ArrayXd r = data.y.array() - ev.pi;
    Eigen::ArrayXd dloss;
    if (!weighted) {
      dloss = -2.0 * r;
    } else {
      const Eigen::ArrayXd v = ev.pi * (1.0 - ev.pi);
      dloss = (-2.0 * r * v - r * r * (1.0 - 2.0 * ev.pi)) / (v * v);
    }
    return prob_jacobian(params, data, ev).transpose() * dloss.matrix();
  }

  /// Gauss-Newton matrix 2 J' W J.
  Matrix curvature(const Vector& g) const {
    const auto params = ItemParameters::unpack(g, kb, kz);
    const auto ev = evaluate(params, data);
    const Matrix j = prob_jacobian(params, data, ev);
    if (!weighted) return 2.0 * j.transpose() * j;
    const Eigen::ArrayXd w = 1.0 / (ev.pi * (1.0 - ev.pi));
    return 2.0 * j.transpose() * (j.array().colwise() * w).matrix();
  }
};

// -- MLE ---------------------------------------------------------------------

struct NegLogLikObjective {
  const Dataset& data;
  Index kb, kz;

  double value(const Vector& g) const { return -log_likelihood(ItemParameters::unpack(g, kb, kz), data); }

  Vector gradient(const Vector& g) const {
    return -log_likelihood_gradient(ItemParameters::unpack(g, kb, kz), data);
  }

  /// Fisher information; seeds the BFGS approximation.
  Matrix curvature(const Vector& g) const {
    const auto params = ItemParameters::unpack(g, kb, kz);
    const auto ev = evaluate(params, data);
    const Eigen::ArrayXd p = ev.pi.unaryExpr([](double v) { return clamp_probability(v); });
    const Matrix j = prob_jacobian(params, data, ev);
    return j.transpose() * (j.array().colwise() / (p * (1.0 - p))).matrix();
  }
};

// -- EM ----------------------------------------------------------------------

/// -l1 = -sum [W2 log(phi) + W3 log(1 - phi)] over b.
struct EmLogisticObjective {
  const Matrix& x;
  const Eigen::ArrayXd& w2;
  const Eigen::ArrayXd& w3;

  double value(const Vector& b) const {
    const Eigen::ArrayXd eta = (x * b).array();
    double total = 0.0;
    for (Index p = 0; p < eta.size(); ++p)
      total += w2[p] * softplus(-eta[p]) + w3[p] * softplus(eta[p]);
    return total;
  }

  Vector gradient(const Vector& b) const {
    const Eigen::ArrayXd phi = (x * b).array().unaryExpr([](double e) { return logistic(e); });
    return -(x.transpose() * (w2 - (w2 + w3) * phi).matrix());
  }

  Matrix curvature(const Vector& b) const {
    const Eigen::ArrayXd phi = (x * b).array().unaryExpr([](double e) { return logistic(e); });
    const Eigen::ArrayXd w = (w2 + w3) * phi * (1.0 - phi);
    return x.transpose() * (x.array().colwise() * w).matrix();
  }
};

/// -l2 = -sum [W1 log(Zc) + W4 log(1 - Zd) + (W2 + W3) log(Zd - Zc)] over (c, d).
struct EmAsymptoteObjective {
  const Matrix& z;
  const Eigen::ArrayXd& w1;
  const Eigen::ArrayXd& w4;
  const Eigen::ArrayXd& mid;  // W2 + W3

  double value(const Vector& cd) const {
    const Index kz = z.cols();
    const Eigen::ArrayXd lo = (z * cd.head(kz)).array();
    const Eigen::ArrayXd up = (z * cd.tail(kz)).array();
    double total = 0.0;
    for (Index p = 0; p < lo.size(); ++p) {
      if (w1[p] != 0.0) total -= w1[p] * std::log(lo[p]);
      if (w4[p] != 0.0) total -= w4[p] * std::log(1.0 - up[p]);
      if (mid[p] != 0.0) total -= mid[p] * std::log(up[p] - lo[p]);
    }
    return total;
  }

  Vector gradient(const Vector& cd) const {
    const Index kz = z.cols();
    const Eigen::ArrayXd lo = (z * cd.head(kz)).array();
    const Eigen::ArrayXd up = (z * cd.tail(kz)).array();
    const Eigen::ArrayXd gap = mid / (up - lo);
    Vector g(2 * kz);
    g.head(kz) = -(z.transpose() * (w1 / lo - gap).matrix());
    g.tail(kz) = -(z.transpose() * (-w4 / (1.0 - up) + gap).matrix());
    return g;
  }

  Matrix curvature(const Vector& cd) const {
    const Index kz = z.cols();
    const Eigen::ArrayXd lo = (z * cd.head(kz)).array();
    const Eigen::ArrayXd up = (z * cd.tail(kz)).array();
    const Eigen::ArrayXd gap2 = mid / ((up - lo) * (up - lo));
    auto weighted = [&](const Eigen::ArrayXd& w) {
      return Matrix(z.transpose() * (z.array().colwise() * w).matrix());
    };
    Matrix h(2 * kz, 2 * kz);
    h.topLeftCorner(kz, kz) = weighted(w1 / (lo * lo) + gap2);
    h.bottomRightCorner(kz, kz) = weighted(w4 / ((1.0 - up) * (1.0 - up)) + gap2);
    h.topRightCorner(kz, kz) = -weighted(gap2);
    h.bottomLeftCorner(kz, kz) = h.topRightCorner(kz, kz).transpose();
    return h;
  }
};

// -- PLF ---------------------------------------------------------------------

/// -l over b with the asymptotes frozen; Fisher scoring curvature.
struct PlfPredictorObjective {
  const Dataset& data;
  const Vector& c;
  const Vector& d;

  ItemParameters at(const Vector& b) const { return {b, c, d}; }

  double value(const Vector& b) const { return -log_likelihood(at(b), data); }

  Vector gradient(const Vector& b) const {
    const auto params = at(b);
    const auto ev = evaluate(params, data);
    const Eigen::ArrayXd p = ev.pi.unaryExpr([](double v) { return clamp_probability(v); });
    const Eigen::ArrayXd score = (data.y.array() - p) / (p * (1.0 - p));
    const Eigen::ArrayXd slope = (ev.upper - ev.lower) * ev.phi * (1.0 - ev.phi);
    return -(data.x.transpose() * (score * slope).matrix());
  }

  Matrix curvature(const Vector& b) const {
    const auto ev = evaluate(at(b), data);
    const Eigen::ArrayXd p = ev.pi.unaryExpr([](double v) { return clamp_probability(v); });
    const Eigen::ArrayXd slope = (ev.upper - ev.lower) * ev.phi * (1.0 - ev.phi);
    const Eigen::ArrayXd w = slope * slope / (p * (1.0 - p));
    return data.x.transpose() * (data.x.array().colwise() * w).matrix();
  }
};

/// -l over (c, d) with phi frozen. pi is linear in (c, d) so this is convex.
struct PlfAsymptoteObjective {
  const Dataset& data;
  const Eigen::ArrayXd& phi;

  Eigen::ArrayXd pi(const Vector& cd) const {
    const Index kz = data.z.cols();
    const Eigen::ArrayXd lo = (data.z * cd.head(kz)).array();
    const Eigen::ArrayXd up = (data.z * cd.tail(kz)).array();
    return (lo + (up - lo) * phi).unaryExpr([](double v) { return clamp_probability(v); });
  }

  double value(const Vector& cd) const {
    const Eigen::ArrayXd p = pi(cd);
    const Eigen::ArrayXd y = data.y.array();
    return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).sum();
  }

  Vector gradient(const Vector& cd) const {
    const Index kz = data.z.cols();
    const Eigen::ArrayXd p = pi(cd);
    const Eigen::ArrayXd score = (data.y.array() - p) / (p * (1.0 - p));
    Vector g(2 * kz);
    g.head(kz) = -(data.z.transpose() * (score * (1.0 - phi)).matrix());
    g.tail(kz) = -(data.z.transpose() * (score * phi).matrix());
    return g;
  }

  Matrix curvature(const Vector& cd) const {
    const Index kz = data.z.cols();
    const Eigen::ArrayXd p = pi(cd);
    const Eigen::ArrayXd y = data.y.array();
    const Eigen::ArrayXd w = y / (p * p) + (1.0 - y) / ((1.0 - p) * (1.0 - p));
    Matrix u(data.size(), 2 * kz);
    u.leftCols(kz) = data.z.array().colwise() * (1.0 - phi);
    u.rightCols(kz) = data.z.array().colwise() * phi;
    return u.transpose() * (u.array().colwise() * w).matrix();
  }
};

inline FitResult start_result(Method method, const ItemParameters& init) {
  FitResult r;
  r.method = method;
  r.params = init;
  r.objective_label = "log_likelihood";
  return r;
}

/// Shared precondition checks; returns an error message or empty.
inline std::string check_inputs(const Dataset& data, const ItemParameters& init,
                                const FitOptions& opts, const Matrix& z_rows) {
  if (opts.max_iterations < 1) return "max_iterations must be at least 1";
  if (!(opts.tolerance > 0.0)) return "tolerance must be positive";
  if (init.b.size() != data.x.cols() || init.c.size() != data.z.cols() ||
      init.d.size() != data.z.cols())
    return "initial parameters do not match the design";
  if (!init.pack().allFinite()) return "non-finite initial parameters";
  if (!is_interior(init, z_rows)) return "initial parameters violate the interior constraints";
  return {};
}

inline void finish(FitResult& r, const Dataset& data, const Matrix& z_rows) {
  r.respondents = data.size();
  try {
    r.boundary_slack = interior_slack(r.params, z_rows);
    r.log_likelihood = log_likelihood(r.params, data);
  } catch (const std::exception& e) {
    r.status = ConvergenceStatus::Crashed;
    r.message = e.what();
  }
}

template <class Body>
FitResult guarded(Method method, const ItemParameters& init, Body&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    FitResult r = start_result(method, init);
    r.status = ConvergenceStatus::Crashed;
    r.message = e.what();
    return r;
  }
}

inline FitResult from_minimize(Method method, const MinimizeResult& m, Index kb, Index kz,
                               const FitOptions& opts) {
  FitResult r;
  r.method = method;
  r.params = ItemParameters::unpack(m.theta, kb, kz);
  r.iterations = m.iterations;
  r.message = m.message;
  switch (m.status) {
    case MinimizeStatus::Converged: r.status = ConvergenceStatus::Converged; break;
    case MinimizeStatus::IterationLimit:
      r.status = ConvergenceStatus::DidNotFinish;
      r.iterations = opts.max_iterations;
      break;
    case MinimizeStatus::Failed: r.status = ConvergenceStatus::Crashed; break;
  }
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NLS

inline FitResult fit_nls(const Dataset& data, const ItemParameters& init, const FitOptions& opts = {}) {
  return detail::guarded(Method::NLS, init, [&] {
    data.validate();
    const detail::AsymptoteContext ctx(data);
    FitResult r = detail::start_result(Method::NLS, init);
    r.objective_label = opts.weighted_nls ? "weighted_rss" : "rss";
    if (auto err = detail::check_inputs(data, init, opts, ctx.z_rows); !err.empty()) {
      r.status = ConvergenceStatus::Crashed;
      r.message = err;
      return r;
    }
    const Index kb = data.x.cols(), kz = data.z.cols();
    const detail::RssObjective obj{data, opts.weighted_nls, kb, kz};
    MinimizeOptions mo;
    mo.max_iterations = opts.max_iterations;
    mo.f_tolerance = opts.tolerance;
    mo.x_tolerance = opts.tolerance;
    mo.curvature = Curvature::Supplied;
    const auto m = minimize(obj, init.pack(), ctx.joint, mo);
    FitResult out = detail::from_minimize(Method::NLS, m, kb, kz, opts);
    out.objective_label = r.objective_label;
    out.objective = m.value;
    out.trace = m.trace;
    detail::finish(out, data, ctx.z_rows);
    return out;
  });
}

// ---------------------------------------------------------------------------
// MLE

inline FitResult fit_mle(const Dataset& data, const ItemParameters& init, const FitOptions& opts = {}) {
  return detail::guarded(Method::MLE, init, [&] {
    data.validate();
    const detail::AsymptoteContext ctx(data);
    FitResult r = detail::start_result(Method::MLE, init);
    if (auto err = detail::check_inputs(data, init, opts, ctx.z_rows); !err.empty()) {
      r.status = ConvergenceStatus::Crashed;
      r.message = err;
      return r;
    }
    const Index kb = data.x.cols(), kz = data.z.cols();
    const detail::NegLogLikObjective obj{data, kb, kz};
    MinimizeOptions mo;
    mo.max_iterations = opts.max_iterations;
    mo.f_tolerance = opts.tolerance;
    mo.x_tolerance = opts.tolerance;
    mo.curvature = Curvature::Bfgs;
    const auto m = minimize(obj, init.pack(), ctx.joint, mo);
    FitResult out = detail::from_minimize(Method::MLE, m, kb, kz, opts);
    out.objective_label = "log_likelihood";
    out.objective = -m.value;
    out.trace.reserve(m.trace.size());
    for (double v : m.trace) out.trace.push_back(-v);
    detail::finish(out, data, ctx.z_rows);
    return out;
  });
}

// ---------------------------------------------------------------------------
// EM

/// Expected latent category indicators given the current parameters.
/// Throws EstimationError when a denominator collapses below 1e-12.
inline LatentWeights em_expectation(const ItemParameters& params, const Dataset& data) {
  const auto ev = evaluate(params, data);
  const Eigen::ArrayXd y = data.y.array();
  const Eigen::ArrayXd endorse = ev.lower + (ev.upper - ev.lower) * ev.phi;
  const Eigen::ArrayXd oppose = 1.0 - ev.lower - (ev.upper - ev.lower) * ev.phi;
  if ((endorse < 1e-12).any() || (oppose < 1e-12).any())
    throw EstimationError("E-step denominator below 1e-12");
  LatentWeights w;
  w.w1 = (ev.lower * y / endorse).matrix();
  w.w2 = (y - w.w1.array()).matrix();
  w.w4 = ((1.0 - ev.upper) * (1.0 - y) / oppose).matrix();
  w.w3 = ((1.0 - y) - w.w4.array()).matrix();
  return w;
}

namespace detail {

inline ItemParameters em_maximisation(const LatentWeights& weights, const Dataset& data,
                                      const ItemParameters& current, const AsymptoteContext& ctx) {
  const Eigen::ArrayXd w1 = weights.w1.array(), w2 = weights.w2.array();
  const Eigen::ArrayXd w3 = weights.w3.array(), w4 = weights.w4.array();
  const Eigen::ArrayXd mid = w2 + w3;

  const EmLogisticObjective l1{data.x, w2, w3};
  const auto mb = minimize(l1, current.b, LinearConstraints{Matrix(0, current.b.size()), Vector(0)},
                           inner_options());
  if (mb.status == MinimizeStatus::Failed) throw EstimationError("M-step (b): " + mb.message);

  const Index kz = current.c.size();
  Vector cd(2 * kz);
  cd << current.c, current.d;
  const EmAsymptoteObjective l2{data.z, w1, w4, mid};
  const auto mcd = minimize(l2, cd, ctx.pair, inner_options());
  if (mcd.status == MinimizeStatus::Failed) throw EstimationError("M-step (c, d): " + mcd.message);

  return {mb.theta, mcd.theta.head(kz), mcd.theta.tail(kz)};
}

}  // namespace detail

/// One M-step: b maximises the weighted logistic part, (c, d) maximise the
/// multinomial asymptote part under the interior constraints. Both start at
/// `current`. Throws EstimationError when a sub-optimisation fails.
inline ItemParameters em_maximisation(const LatentWeights& weights, const Dataset& data,
                                      const ItemParameters& current) {
  return detail::em_maximisation(weights, data, current, detail::AsymptoteContext(data));
}

/// l1 + l2 of the complete-data log-likelihood at fixed weights.
inline double em_complete_loglik(const LatentWeights& w, const Dataset& data, const ItemParameters& params) {
  const auto ev = evaluate(params, data);
  double total = 0.0;
  for (Index p = 0; p < data.size(); ++p) {
    auto term = [](double weight, double prob) { return weight == 0.0 ? 0.0 : weight * std::log(prob); };
    total += term(w.w2[p], ev.phi[p]) + term(w.w3[p], 1.0 - ev.phi[p]);
    total += term(w.w1[p], ev.lower[p]) + term(w.w4[p], 1.0 - ev.upper[p]) +
             term(w.w2[p] + w.w3[p], ev.upper[p] - ev.lower[p]);
  }
  return total;
}

inline FitResult fit_em(const Dataset& data, const ItemParameters& init, const FitOptions& opts = {}) {
  return detail::guarded(Method::EM, init, [&] {
    data.validate();
    const detail::AsymptoteContext ctx(data);
    FitResult r = detail::start_result(Method::EM, init);
    if (auto err = detail::check_inputs(data, init, opts, ctx.z_rows); !err.empty()) {
      r.status = ConvergenceStatus::Crashed;
      r.message = err;
      return r;
    }
    double ll = log_likelihood(init, data);
    r.trace.push_back(ll);
    r.status = ConvergenceStatus::DidNotFinish;
    for (int it = 1; it <= opts.max_iterations; ++it) {
      const auto weights = em_expectation(r.params, data);
      r.params = detail::em_maximisation(weights, data, r.params, ctx);
      const double ll_new = log_likelihood(r.params, data);
      if (!std::isfinite(ll_new)) throw EstimationError("non-finite log-likelihood");
      r.trace.push_back(ll_new);
      r.iterations = it;
      const double change = std::abs(ll_new - ll);
      ll = ll_new;
      if (change < opts.tolerance) {
        r.status = ConvergenceStatus::Converged;
        break;
      }
    }
    r.message = r.converged() ? "tolerance reached" : "iteration limit";
    r.objective = ll;
    detail::finish(r, data, ctx.z_rows);
    return r;
  });
}

// ---------------------------------------------------------------------------
// PLF

namespace detail {

inline Vector plf_step_b(const Dataset& data, const Vector& c, const Vector& d, const Vector& b) {
  const PlfPredictorObjective obj{data, c, d};
  const auto m = minimize(obj, b, LinearConstraints{Matrix(0, b.size()), Vector(0)}, inner_options());
  if (m.status == MinimizeStatus::Failed) throw EstimationError("PLF step one: " + m.message);
  return m.theta;
}

inline std::pair<Vector, Vector> plf_step_asymptotes(const Dataset& data, const Vector& b,
                                                     const Vector& c, const Vector& d,
                                                     const AsymptoteContext& ctx) {
  if (!b.allFinite()) throw EstimationError("PLF step two: non-finite b");
  const Eigen::ArrayXd phi = (data.x * b).array().unaryExpr([](double e) { return logistic(e); });
  const PlfAsymptoteObjective obj{data, phi};
  const Index kz = c.size();
  Vector cd(2 * kz);
  cd << c, d;
  const auto m = minimize(obj, cd, ctx.pair, inner_options());
  if (m.status == MinimizeStatus::Failed) throw EstimationError("PLF step two: " + m.message);
  return {m.theta.head(kz), m.theta.tail(kz)};
}

}  // namespace detail

/// Step one: b maximising the log-likelihood with the link's asymptotes frozen.
inline Vector plf_step_b(const Dataset& data, const Vector& current_c, const Vector& current_d,
                         const Vector& current_b) {
  return detail::plf_step_b(data, current_c, current_d, current_b);
}

/// Step two: (c, d) maximising the log-likelihood with phi frozen at current_b.
inline std::pair<Vector, Vector> plf_step_asymptotes(const Dataset& data, const Vector& current_b,
                                                     const Vector& current_c, const Vector& current_d) {
  return detail::plf_step_asymptotes(data, current_b, current_c, current_d,
                                     detail::AsymptoteContext(data));
}

inline FitResult fit_plf(const Dataset& data, const ItemParameters& init, const FitOptions& opts = {}) {
  return detail::guarded(Method::PLF, init, [&] {
    data.validate();
    const detail::AsymptoteContext ctx(data);
    FitResult r = detail::start_result(Method::PLF, init);
    if (auto err = detail::check_inputs(data, init, opts, ctx.z_rows); !err.empty()) {
      r.status = ConvergenceStatus::Crashed;
      r.message = err;
      return r;
    }
    double ll = log_likelihood(init, data);
    r.trace.push_back(ll);
    r.status = ConvergenceStatus::DidNotFinish;
    for (int it = 1; it <= opts.max_iterations; ++it) {
      r.params.b = detail::plf_step_b(data, r.params.c, r.params.d, r.params.b);
      auto [c, d] = detail::plf_step_asymptotes(data, r.params.b, r.params.c, r.params.d, ctx);
      r.params.c = std::move(c);
      r.params.d = std::move(d);
      const double ll_new = log_likelihood(r.params, data);
      if (!std::isfinite(ll_new)) throw EstimationError("non-finite log-likelihood");
      r.trace.push_back(ll_new);
      r.iterations = it;
      const double change = std::abs(ll_new - ll);
      ll = ll_new;
      if (change < opts.tolerance) {
        r.status = ConvergenceStatus::Converged;
        break;
      }
    }
    r.message = r.converged() ? "tolerance reached" : "iteration limit";
    r.objective = ll;
    detail::finish(r, data, ctx.z_rows);
    return r;
  });
}

inline FitResult fit(Method method, const Dataset& data, const ItemParameters& init,
                     const FitOptions& opts = {}) {
  switch (method) {
    case Method::NLS: return fit_nls(data, init, opts);
    case Method::MLE: return fit_mle(data, init, opts);
    case Method::EM: return fit_em(data, init, opts);
    case Method::PLF: return fit_plf(data, init, opts);
  }
  return detail::start_result(method, init);
}

}  // namespace fourpl
