#pragma once

// Starting values from tertiles of the matching criterion and the
// upper-lower index.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "model.hpp"

namespace fourpl {

inline constexpr double kInitLowerCeiling = 0.45;
inline constexpr double kInitUpperFloor = 0.55;
inline constexpr int kInitSmoothingWindow = 7;

struct InitDiagnostics {
  double tertile_low = 0.0;   // 1/3 quantile of the criterion
  double tertile_high = 0.0;  // 2/3 quantile of the criterion
  double p_lower = 0.0;       // empirical P(Y=1) below the first group's mean
  double p_upper = 0.0;       // empirical P(Y=1) above the last group's mean
  double uli = 0.0;           // upper-lower index
  double midpoint_level = 0.0;
  bool crossing_found = false;  // false: midpoint_level fell back to the median
};

namespace detail {

/// Quantile with linear interpolation between order statistics (R type 7).
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Centred moving average, window shrinks at the ends.
inline std::vector<double> moving_average(const std::vector<double>& v, int window) {
  const int half = window / 2;
  const int n = static_cast<int>(v.size());
  std::vector<double> out(v.size());
  for (int i = 0; i < n; ++i) {
    const int a = std::max(0, i - half);
    const int b = std::min(n - 1, i + half);
    double s = 0.0;
    for (int j = a; j <= b; ++j) s += v[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(b - a + 1);
  }
  return out;
}

/// Level at which the smoothed curve passes `mid` in the direction of the
/// slope. Among all such crossings the one that best separates points below
/// and above `mid` is used, so isolated noisy excursions in the tails do not
/// decide it; for a monotone curve this is its single crossing.
inline std::pair<double, bool> midpoint_crossing(const std::vector<double>& x,
                                                 const std::vector<double>& smooth, double mid,
                                                 bool increasing) {
  const std::size_t n = x.size();
  auto high = [&](std::size_t i) { return increasing ? smooth[i] >= mid : smooth[i] <= mid; };
  // cost(k) = #high before k + #low at or after k
  std::size_t low_total = 0;
  for (std::size_t i = 0; i < n; ++i) low_total += high(i) ? 0 : 1;
  std::size_t high_before = 0, low_before = 0;
  std::size_t best_cost = n + 1;
  std::size_t best_k = 0;
  bool found = false;
  for (std::size_t k = 1; k < n; ++k) {
    high_before += high(k - 1) ? 1 : 0;
    low_before += high(k - 1) ? 0 : 1;
    if (high(k - 1) || !high(k)) continue;  // not a low -> high crossing
    const std::size_t cost = high_before + (low_total - low_before);
    if (cost < best_cost) {
      best_cost = cost;
      best_k = k;
      found = true;
    }
  }
  if (!found) return {0.0, false};
  const double s0 = smooth[best_k - 1], s1 = smooth[best_k];
  const double t = s1 == s0 ? 0.0 : (mid - s0) / (s1 - s0);
  return {x[best_k - 1] + std::clamp(t, 0.0, 1.0) * (x[best_k] - x[best_k - 1]), true};
}

}  // namespace detail

/// Starting values for `spec`: c and d from the tails, b1 from the
/// upper-lower index, b0 from where the smoothed empirical curve passes the
/// asymptote midpoint. Group and covariate coefficients start at 0.
inline std::pair<ItemParameters, InitDiagnostics> initial_values(const Dataset& data,
                                                                 const ModelSpec& spec) {
  data.validate();
  if (data.x.cols() != spec.predictor_size() || data.z.cols() != spec.asymptote_size())
    throw ModelError("dataset does not match model specification");
  const Index n = data.size();
  const Vector crit = data.criterion();

  // Sort by (x, y) so that respondent order never matters.
  std::vector<std::pair<double, double>> rows(static_cast<std::size_t>(n));
  for (Index p = 0; p < n; ++p) rows[static_cast<std::size_t>(p)] = {crit[p], data.y[p]};
  std::sort(rows.begin(), rows.end());
  std::vector<double> xs(rows.size()), ys(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::tie(xs[i], ys[i]) = rows[i];

  if (xs.front() == xs.back()) throw ModelError("degenerate matching criterion: all values equal");
  {
    std::vector<double> u = xs;
    u.erase(std::unique(u.begin(), u.end()), u.end());
    if (u.size() < 9) throw ModelError("matching criterion needs at least 9 distinct values");
  }
  const double ysum = std::accumulate(ys.begin(), ys.end(), 0.0);
  if (ysum == 0.0 || ysum == static_cast<double>(n)) throw ModelError("no variation in responses");

  InitDiagnostics diag;
  diag.tertile_low = detail::quantile_sorted(xs, 1.0 / 3.0);
  diag.tertile_high = detail::quantile_sorted(xs, 2.0 / 3.0);

  // Ties at a tertile bound belong to the lower group.
  std::vector<double> x_first, y_first, x_last, y_last;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] <= diag.tertile_low) {
      x_first.push_back(xs[i]);
      y_first.push_back(ys[i]);
    } else if (xs[i] > diag.tertile_high) {
      x_last.push_back(xs[i]);
      y_last.push_back(ys[i]);
    }
  }
  if (x_first.empty() || x_last.empty()) throw ModelError("empty tertile group");

  auto tail_probability = [&](double cut, bool below) {
    double hits = 0.0, count = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (below ? xs[i] < cut : xs[i] > cut) {
        hits += ys[i];
        count += 1.0;
      }
    }
    if (count == 0.0) {  // heavy ties at the extreme: include the cut itself
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] == cut) {
          hits += ys[i];
          count += 1.0;
        }
      }
    }
    return hits / count;
  };
  diag.p_lower = tail_probability(detail::mean_of(x_first), true);
  diag.p_upper = tail_probability(detail::mean_of(x_last), false);
  diag.uli = detail::mean_of(y_last) - detail::mean_of(y_first);

  const double c = std::clamp(diag.p_lower, kAsymptoteMargin, kInitLowerCeiling);
  const double d = std::clamp(diag.p_upper, kInitUpperFloor, 1.0 - kAsymptoteMargin);
  const double b1 = 4.0 * diag.uli;

  const auto smooth = detail::moving_average(ys, kInitSmoothingWindow);
  const auto [level, found] = detail::midpoint_crossing(xs, smooth, 0.5 * (c + d), b1 >= 0.0);
  diag.crossing_found = found;
  diag.midpoint_level = found ? level : detail::quantile_sorted(xs, 0.5);

  ItemParameters params = ItemParameters::zeros(spec);
  params.b[0] = -b1 * diag.midpoint_level;
  params.b[1] = b1;
  params.c[0] = c;
  params.d[0] = d;
  return {std::move(params), diag};
}

}  // namespace fourpl
