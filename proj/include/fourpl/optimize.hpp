#pragma once

// Small dense minimizer for smooth objectives under linear inequality
// constraints A * theta >= lower. Directions come from either a supplied
// curvature matrix (Newton, Gauss-Newton, Fisher scoring) or a BFGS
// approximation; feasibility is kept with a ratio test and an active set.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "model.hpp"

namespace fourpl {

struct LinearConstraints {
  Matrix a;      // m x k
  Vector lower;  // m

  Index size() const { return a.rows(); }
  Vector slack(const Vector& theta) const { return a * theta - lower; }
};

enum class Curvature { Supplied, Bfgs };

struct MinimizeOptions {
  int max_iterations = 2000;
  double f_tolerance = 1e-6;  // absolute change in objective
  double x_tolerance = 1e-6;  // max absolute change in parameters
  Curvature curvature = Curvature::Bfgs;
  int max_backtracks = 60;
};

enum class MinimizeStatus { Converged, IterationLimit, Failed };

struct MinimizeResult {
  Vector theta;
  double value = 0.0;
  int iterations = 0;
  MinimizeStatus status = MinimizeStatus::Failed;
  std::string message;
  std::vector<double> trace;  // objective after each accepted step, starting value first
};

template <class P>
concept SmoothObjective = requires(const P& p, const Vector& t) {
  { p.value(t) } -> std::convertible_to<double>;
  { p.gradient(t) } -> std::convertible_to<Vector>;
};

/// Objectives that can supply a positive (semi)definite curvature matrix.
template <class P>
concept CurvedObjective = SmoothObjective<P> && requires(const P& p, const Vector& t) {
  { p.curvature(t) } -> std::convertible_to<Matrix>;
};

namespace detail {

/// Solves min g'p + p'Bp/2 subject to A_w p = 0. Returns false if the
/// reduced curvature could not be made positive definite.
inline bool constrained_direction(const Matrix& b, const Vector& g, const Matrix& active,
                                  Vector& p) {
  const Index k = g.size();
  Matrix basis;
  if (active.rows() == 0) {
    basis = Matrix::Identity(k, k);
  } else {
    Eigen::ColPivHouseholderQR<Matrix> qr(active.transpose());
    const Index rank = qr.rank();
    if (rank >= k) {
      p = Vector::Zero(k);
      return true;
    }
    const Matrix q = qr.householderQ();
    basis = q.rightCols(k - rank);
  }
  Matrix reduced = basis.transpose() * b * basis;
  reduced = (0.5 * (reduced + reduced.transpose())).eval();
  const Vector rg = basis.transpose() * g;
  double shift = 0.0;
  const double scale = std::max(1.0, reduced.diagonal().cwiseAbs().maxCoeff());
  for (int attempt = 0; attempt < 30; ++attempt) {
    Eigen::LLT<Matrix> llt(reduced + shift * Matrix::Identity(reduced.rows(), reduced.cols()));
    if (llt.info() == Eigen::Success) {
      const Vector step = -llt.solve(rg);
      if (step.allFinite()) {
        p = basis * step;
        return true;
      }
    }
    shift = shift == 0.0 ? 1e-10 * scale : shift * 10.0;
  }
  return false;
}

/// Least-squares multipliers for g = A_w' lambda.
inline Vector multipliers(const Matrix& active, const Vector& g) {
  if (active.rows() == 0) return {};
  return active.transpose().colPivHouseholderQr().solve(g);
}

}  // namespace detail

/// Minimizes `objective` from a feasible `start`.
template <SmoothObjective P>
MinimizeResult minimize(const P& objective, const Vector& start, const LinearConstraints& cons,
                        const MinimizeOptions& opts) {
  constexpr double kActive = 1e-10;
  const Index k = start.size();
  MinimizeResult res;
  res.theta = start;

  if (cons.size() > 0 && (cons.slack(start).array() < -kSlackRounding).any()) {
    res.message = "infeasible starting point";
    return res;
  }

  double f = objective.value(res.theta);
  Vector g = objective.gradient(res.theta);
  if (!std::isfinite(f) || !g.allFinite()) {
    res.message = "non-finite objective at start";
    return res;
  }
  res.value = f;
  res.trace.push_back(f);

  bool use_bfgs = true;
  if constexpr (CurvedObjective<P>) use_bfgs = opts.curvature == Curvature::Bfgs;

  // BFGS starts from the supplied curvature when there is one, otherwise
  // from a scaled identity that is rescaled after the first step.
  Matrix b;
  bool bfgs_fresh = true;
  bool identity_start = false;
  auto reset_curvature = [&](const Vector& theta) {
    if constexpr (CurvedObjective<P>) {
      b = objective.curvature(theta);
    } else {
      b = Matrix::Identity(k, k) * std::max(1.0, g.norm());
      identity_start = true;
    }
    bfgs_fresh = true;
  };
  reset_curvature(res.theta);
  if (!b.allFinite()) {
    res.message = "non-finite curvature at start";
    return res;
  }

  std::vector<bool> active(static_cast<std::size_t>(cons.size()), false);
  {
    const Vector s = cons.slack(res.theta);
    for (Index i = 0; i < cons.size(); ++i) active[static_cast<std::size_t>(i)] = s[i] <= kActive;
  }

  auto active_matrix = [&](const std::vector<bool>& mask) {
    Index rows = 0;
    for (bool a : mask) rows += a ? 1 : 0;
    Matrix out(rows, k);
    Index r = 0;
    for (Index i = 0; i < cons.size(); ++i)
      if (mask[static_cast<std::size_t>(i)]) out.row(r++) = cons.a.row(i);
    return out;
  };

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    // Release constraints whose multipliers say the gradient points inward.
    {
      const Matrix aw = active_matrix(active);
      const Vector lambda = detail::multipliers(aw, g);
      Index r = 0;
      for (Index i = 0; i < cons.size(); ++i) {
        if (!active[static_cast<std::size_t>(i)]) continue;
        if (lambda[r] < 0.0) active[static_cast<std::size_t>(i)] = false;
        ++r;
      }
    }

    Vector p;
    double alpha_max = std::numeric_limits<double>::infinity();
    Index blocking = -1;
    bool direction_ok = false;
    for (Index guard = 0; guard <= cons.size(); ++guard) {
      if (!detail::constrained_direction(b, g, active_matrix(active), p)) break;
      alpha_max = std::numeric_limits<double>::infinity();
      blocking = -1;
      const Vector ap = cons.a * p;
      const Vector s = cons.slack(res.theta);
      for (Index i = 0; i < cons.size(); ++i) {
        if (active[static_cast<std::size_t>(i)] || ap[i] >= 0.0) continue;
        const double limit = std::max(0.0, s[i]) / -ap[i];
        if (limit < alpha_max) {
          alpha_max = limit;
          blocking = i;
        }
      }
      // A constraint that allows no real movement joins the active set.
      if (blocking >= 0 && (s[blocking] <= kActive || alpha_max * p.lpNorm<Eigen::Infinity>() <= 1e-12)) {
        active[static_cast<std::size_t>(blocking)] = true;
        continue;
      }
      direction_ok = true;
      break;
    }
    if (!direction_ok) {
      res.message = "could not form a descent direction";
      return res;
    }

    const double slope = g.dot(p);
    if (p.lpNorm<Eigen::Infinity>() == 0.0 || slope >= 0.0) {
      if (p.lpNorm<Eigen::Infinity>() == 0.0 || -slope <= 1e-14 * (1.0 + std::abs(f))) {
        res.status = MinimizeStatus::Converged;
        res.iterations = iter;
        res.message = "stationary point";
        return res;
      }
      if (use_bfgs && !bfgs_fresh) {
        reset_curvature(res.theta);
        --iter;
        continue;
      }
      res.message = "direction is not a descent direction";
      res.iterations = iter;
      return res;
    }

    // Backtracking Armijo search inside the feasible segment.
    double alpha = std::min(1.0, alpha_max);
    double f_new = f;
    Vector theta_new;
    bool accepted = false;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      theta_new = res.theta + alpha * p;
      f_new = objective.value(theta_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (use_bfgs && !bfgs_fresh) {
        reset_curvature(res.theta);
        --iter;
        continue;
      }
      // Predicted decrease below working precision: nothing left to gain.
      if (-slope <= 1e-10 * (1.0 + std::abs(f))) {
        res.status = MinimizeStatus::Converged;
        res.iterations = iter;
        res.message = "no further decrease at working precision";
        return res;
      }
      res.message = "line search failed";
      res.iterations = iter;
      return res;
    }
    const bool hit_constraint = blocking >= 0 && alpha == alpha_max;
    if (hit_constraint) active[static_cast<std::size_t>(blocking)] = true;

    const Vector step = theta_new - res.theta;
    const Vector g_new = objective.gradient(theta_new);
    if (!g_new.allFinite()) {
      res.message = "non-finite gradient";
      res.iterations = iter + 1;
      return res;
    }
    const double df = f - f_new;
    res.theta = theta_new;
    res.value = f_new;
    res.trace.push_back(f_new);
    res.iterations = iter + 1;

    if (!use_bfgs) {
      if constexpr (CurvedObjective<P>) b = objective.curvature(res.theta);
    } else {
      const Vector yv = g_new - g;
      const double sy = step.dot(yv);
      if (sy > 1e-12 * step.norm() * yv.norm()) {
        if (bfgs_fresh && identity_start) b = Matrix::Identity(k, k) * (yv.dot(yv) / sy);
        const Vector bs = b * step;
        b += yv * yv.transpose() / sy - bs * bs.transpose() / step.dot(bs);
        bfgs_fresh = false;
        identity_start = false;
      }
    }
    if (!b.allFinite()) {
      res.message = "non-finite curvature";
      return res;
    }
    f = f_new;
    g = g_new;

    // A step cut short by a new constraint says nothing about convergence.
    if (!hit_constraint && std::abs(df) < opts.f_tolerance &&
        step.lpNorm<Eigen::Infinity>() < opts.x_tolerance) {
      res.status = MinimizeStatus::Converged;
      res.message = "tolerance reached";
      return res;
    }
  }
  res.status = MinimizeStatus::IterationLimit;
  res.message = "iteration limit";
  return res;
}

/// Constraints Z.c >= eps, Z.d <= 1 - eps, Z.d - Z.c >= eps over distinct
/// asymptote rows, expressed on a parameter vector whose (c, d) blocks start
/// at `offset`.
inline LinearConstraints asymptote_constraints(const Matrix& z_rows, Index offset, Index dim) {
  const Index m = z_rows.rows();
  const Index kz = z_rows.cols();
  LinearConstraints cons;
  cons.a = Matrix::Zero(3 * m, dim);
  cons.lower = Vector::Zero(3 * m);
  for (Index r = 0; r < m; ++r) {
    cons.a.block(3 * r, offset, 1, kz) = z_rows.row(r);
    cons.lower[3 * r] = kAsymptoteMargin;
    cons.a.block(3 * r + 1, offset + kz, 1, kz) = -z_rows.row(r);
    cons.lower[3 * r + 1] = -(1.0 - kAsymptoteMargin);
    cons.a.block(3 * r + 2, offset, 1, kz) = -z_rows.row(r);
    cons.a.block(3 * r + 2, offset + kz, 1, kz) = z_rows.row(r);
    cons.lower[3 * r + 2] = kAsymptoteMargin;
  }
  return cons;
}

}  // namespace fourpl
