#pragma once

// Seeded data generation from a known item and the Monte Carlo harness that
// tallies convergence status and summarises estimates across replications.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "estimators.hpp"
#include "inference.hpp"
#include "initialization.hpp"
#include "model.hpp"

namespace fourpl {

// ---------------------------------------------------------------------------
// Random streams

/// Stream purposes; each gets an independent key.
enum class StreamPurpose : std::uint64_t { Criterion = 1, Response = 2 };

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t n, std::uint64_t rep, StreamPurpose purpose) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ n);
  k = splitmix64(k ^ rep);
  return splitmix64(k ^ static_cast<std::uint64_t>(purpose));
}

/// Uniform on (0, 1) from the top 53 bits, never exactly 0.
inline double uniform_open(std::mt19937_64& eng) {
  return (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Box-Muller; written out so draws do not depend on the standard library.
inline double standard_normal(std::mt19937_64& eng) {
  const double u1 = uniform_open(eng);
  const double u2 = uniform_open(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

/// Data-generating item parameters.
struct TrueParameters : ItemParameters {
  static TrueParameters simple_default() {
    TrueParameters t;
    t.b = Vector{{0.0, 1.5}};
    t.c = Vector{{0.25}};
    t.d = Vector{{0.9}};
    return t;
  }

  static TrueParameters group_default() {
    TrueParameters t;
    t.b = Vector{{0.0, 1.5, -1.0, 0.5}};
    t.c = Vector{{0.25, -0.15}};
    t.d = Vector{{0.9, 0.1}};
    return t;
  }

  static TrueParameters defaults(ModelKind kind) {
    return kind == ModelKind::GroupSpecific ? group_default() : simple_default();
  }
};

inline ModelSpec spec_for(ModelKind kind) {
  if (kind == ModelKind::Simple) return ModelSpec::simple();
  if (kind == ModelKind::GroupSpecific) return ModelSpec::group_specific();
  throw ModelError("simulation supports the simple and group-specific layouts only");
}

/// X standard normal; in the group layout the first floor(n/2) respondents
/// form group 0 and the rest group 1; Y Bernoulli(pi).
inline Dataset generate_dataset(const TrueParameters& truth, ModelKind kind, Index n, std::uint64_t seed,
                                std::uint64_t replication = 0) {
  if (n < 1) throw ModelError("sample size must be at least 1");
  const ModelSpec spec = spec_for(kind);
  if (truth.b.size() != spec.predictor_size() || truth.c.size() != spec.asymptote_size() ||
      truth.d.size() != spec.asymptote_size())
    throw ModelError("truth does not match the model layout");
  if (!truth.pack().allFinite()) throw ModelError("non-finite truth");

  const auto un = static_cast<std::uint64_t>(n);
  std::mt19937_64 crit_rng(detail::stream_key(seed, un, replication, StreamPurpose::Criterion));
  std::mt19937_64 resp_rng(detail::stream_key(seed, un, replication, StreamPurpose::Response));

  Dataset data;
  data.x = Matrix::Ones(n, spec.predictor_size());
  data.z = Matrix::Ones(n, spec.asymptote_size());
  data.y.resize(n);
  const Index reference = n / 2;
  for (Index p = 0; p < n; ++p) {
    const double x = detail::standard_normal(crit_rng);
    data.x(p, 1) = x;
    if (kind == ModelKind::GroupSpecific) {
      const double g = p < reference ? 0.0 : 1.0;
      data.x(p, 2) = g;
      data.x(p, 3) = g * x;
      data.z(p, 1) = g;
    }
  }
  // Truth must give probabilities in the closed unit interval on every row.
  const auto ev = evaluate(truth, data);
  for (Index p = 0; p < n; ++p) data.y[p] = detail::uniform_open(resp_rng) < ev.pi[p] ? 1.0 : 0.0;
  return data;
}

// ---------------------------------------------------------------------------
// Study

struct SimulationConfig {
  ModelKind kind = ModelKind::Simple;
  TrueParameters truth = TrueParameters::simple_default();
  std::vector<Index> sample_sizes{500};
  int replications = 200;
  std::uint64_t seed = 20240521;
  std::vector<Method> methods{Method::NLS, Method::MLE, Method::EM, Method::PLF};
  FitOptions fit_options;
  unsigned threads = 1;  // 0: one per hardware thread
  bool percentile_ci = false;
  bool covariance_diagnostics = false;
  double ci_level = 0.95;

  void validate() const {
    if (replications < 1) throw ModelError("replications must be at least 1");
    if (sample_sizes.empty()) throw ModelError("no sample sizes");
    for (Index n : sample_sizes)
      if (n < 20) throw ModelError("sample sizes must be at least 20");
    if (methods.empty()) throw ModelError("no methods");
    if (fit_options.max_iterations < 1 || !(fit_options.tolerance > 0.0)) throw ModelError("invalid fit options");
    const ModelSpec spec = spec_for(kind);
    if (truth.size() != spec.parameter_count()) throw ModelError("truth does not match the model layout");
  }
};

/// Covariance checks on one converged fit.
struct CovarianceDiagnostics {
  bool available = false;
  std::string message;           // why it is unavailable
  double asymmetry = 0.0;        // max |C - C'|
  double min_eigenvalue = 0.0;
  std::vector<ConfidenceInterval> intervals;  // Wald, with asymptote levels per group
};

/// Estimates above this in absolute value are not meaningful.
inline constexpr double kNonmeaningfulBound = 100.0;

struct ReplicationRecord {
  Index sample_size = 0;
  int replication = 0;
  Method method = Method::MLE;
  ConvergenceStatus status = ConvergenceStatus::Crashed;
  int iterations = 0;
  Vector estimate;  // gamma order
  double log_likelihood = std::numeric_limits<double>::quiet_NaN();
  bool nonmeaningful = false;
  std::string message;
  std::optional<CovarianceDiagnostics> covariance;

  bool converged_ok() const { return status == ConvergenceStatus::Converged && !nonmeaningful; }
};

inline bool is_nonmeaningful(const ItemParameters& params) {
  return (params.b.array().abs() > kNonmeaningfulBound).any() || !params.b.allFinite();
}

inline CovarianceDiagnostics diagnose_covariance(const FitResult& fit, const Dataset& data, double level) {
  CovarianceDiagnostics diag;
  try {
    const auto cov = default_covariance(fit, data);
    diag.asymmetry = (cov.matrix - cov.matrix.transpose()).cwiseAbs().maxCoeff();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (cov.matrix + cov.matrix.transpose()), Eigen::EigenvaluesOnly);
    diag.min_eigenvalue = eig.eigenvalues().minCoeff();
    diag.available = true;
    diag.intervals = wald_intervals(fit, cov, level);
    auto levels = asymptote_intervals(fit, cov, unique_rows(data.z), level);
    diag.intervals.insert(diag.intervals.end(), levels.begin(), levels.end());
  } catch (const std::exception& e) {
    diag.available = false;
    diag.message = e.what();
  }
  return diag;
}

/// All methods on one generated dataset.
inline std::vector<ReplicationRecord> run_replication(const SimulationConfig& cfg, Index n, int rep) {
  std::vector<ReplicationRecord> out;
  out.reserve(cfg.methods.size());
  auto blank = [&](Method m) {
    ReplicationRecord r;
    r.sample_size = n;
    r.replication = rep;
    r.method = m;
    return r;
  };
  const ModelSpec spec = spec_for(cfg.kind);
  Dataset data;
  ItemParameters init;
  try {
    data = generate_dataset(cfg.truth, cfg.kind, n, cfg.seed, static_cast<std::uint64_t>(rep));
    init = initial_values(data, spec).first;
  } catch (const std::exception& e) {
    for (Method m : cfg.methods) {
      auto r = blank(m);
      r.message = std::string("setup failed: ") + e.what();
      out.push_back(std::move(r));
    }
    return out;
  }
  for (Method m : cfg.methods) {
    auto r = blank(m);
    const FitResult fit = fourpl::fit(m, data, init, cfg.fit_options);
    r.status = fit.status;
    r.iterations = fit.iterations;
    r.estimate = fit.params.pack();
    r.log_likelihood = fit.log_likelihood;
    r.nonmeaningful = is_nonmeaningful(fit.params);
    r.message = fit.message;
    if (cfg.covariance_diagnostics && fit.converged()) r.covariance = diagnose_covariance(fit, data, cfg.ci_level);
    out.push_back(std::move(r));
  }
  return out;
}

/// Records ordered by (sample size, replication, method); the order does not
/// depend on the number of threads.
inline std::vector<ReplicationRecord> run_study(const SimulationConfig& cfg) {
  cfg.validate();
  const std::size_t reps = static_cast<std::size_t>(cfg.replications);
  const std::size_t jobs = cfg.sample_sizes.size() * reps;
  std::vector<std::vector<ReplicationRecord>> slots(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++)
      slots[j] = run_replication(cfg, cfg.sample_sizes[j / reps], static_cast<int>(j % reps));
  };
  unsigned threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, jobs));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  std::vector<ReplicationRecord> records;
  records.reserve(jobs * cfg.methods.size());
  for (auto& slot : slots)
    for (auto& r : slot) records.push_back(std::move(r));
  return records;
}

// ---------------------------------------------------------------------------
// Summary

struct StatusCell {
  Index sample_size = 0;
  Method method = Method::MLE;
  int total = 0;
  int converged = 0;
  int crashed = 0;
  int dnf = 0;
  double converged_pct = 0.0;
  double crashed_pct = 0.0;
  double dnf_pct = 0.0;
  int non_crashed = 0;
  double iterations_mean = std::numeric_limits<double>::quiet_NaN();
  double iterations_median = std::numeric_limits<double>::quiet_NaN();
};

struct ParameterSummary {
  std::string name;
  double truth = 0.0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  double lower = std::numeric_limits<double>::quiet_NaN();
  double upper = std::numeric_limits<double>::quiet_NaN();
  bool truncated = false;
};

struct EstimateCell {
  Index sample_size = 0;
  Method method = Method::MLE;
  int count = 0;  // size of the joint-convergence subset
  bool empty = true;
  std::vector<ParameterSummary> parameters;
};

struct SimulationSummary {
  ModelKind kind = ModelKind::Simple;
  int replications = 0;
  std::uint64_t seed = 0;
  double ci_level = 0.95;
  bool percentile_ci = false;
  std::vector<StatusCell> status;
  std::vector<EstimateCell> estimates;
};

namespace detail {

/// Empirical quantile, linear interpolation between order statistics.
inline double sample_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Status percentages over all records; estimates over replications in which
/// every method converged and none produced a nonmeaningful estimate.
inline SimulationSummary summarise_study(const std::vector<ReplicationRecord>& records, const SimulationConfig& cfg) {
  if (records.empty()) throw ModelError("no replication records");
  const ModelSpec spec = spec_for(cfg.kind);
  const auto names = spec.parameter_names();
  const Vector truth = cfg.truth.pack();
  const Index kb = spec.predictor_size(), kz = spec.asymptote_size();

  SimulationSummary s;
  s.kind = cfg.kind;
  s.replications = cfg.replications;
  s.seed = cfg.seed;
  s.ci_level = cfg.ci_level;
  s.percentile_ci = cfg.percentile_ci;

  for (Index n : cfg.sample_sizes) {
    // Replications where every method converged to a meaningful estimate.
    std::vector<int> good(static_cast<std::size_t>(cfg.replications), 0);
    for (const auto& r : records)
      if (r.sample_size == n && r.converged_ok())
        ++good[static_cast<std::size_t>(r.replication)];
    const int need = static_cast<int>(cfg.methods.size());

    for (Method m : cfg.methods) {
      StatusCell cell;
      cell.sample_size = n;
      cell.method = m;
      std::vector<double> iters;
      for (const auto& r : records) {
        if (r.sample_size != n || r.method != m) continue;
        ++cell.total;
        switch (r.status) {
          case ConvergenceStatus::Converged: ++cell.converged; break;
          case ConvergenceStatus::Crashed: ++cell.crashed; break;
          case ConvergenceStatus::DidNotFinish: ++cell.dnf; break;
        }
        if (r.status != ConvergenceStatus::Crashed) iters.push_back(r.iterations);
      }
      if (cell.total > 0) {
        cell.converged_pct = 100.0 * cell.converged / cell.total;
        cell.crashed_pct = 100.0 * cell.crashed / cell.total;
        cell.dnf_pct = 100.0 * cell.dnf / cell.total;
      }
      cell.non_crashed = static_cast<int>(iters.size());
      if (!iters.empty()) {
        double sum = 0.0;
        for (double v : iters) sum += v;
        cell.iterations_mean = sum / static_cast<double>(iters.size());
        cell.iterations_median = detail::sample_quantile(iters, 0.5);
      }
      s.status.push_back(cell);

      EstimateCell est;
      est.sample_size = n;
      est.method = m;
      std::vector<Vector> rows;
      for (const auto& r : records)
        if (r.sample_size == n && r.method == m && good[static_cast<std::size_t>(r.replication)] == need)
          rows.push_back(r.estimate);
      est.count = static_cast<int>(rows.size());
      est.empty = rows.empty();
      const double z = normal_quantile(0.5 * (1.0 + cfg.ci_level));
      for (Index k = 0; k < truth.size(); ++k) {
        ParameterSummary ps;
        ps.name = names[static_cast<std::size_t>(k)];
        ps.truth = truth[k];
        if (!rows.empty()) {
          std::vector<double> v;
          for (const auto& row : rows) v.push_back(row[k]);
          double sum = 0.0;
          for (double x : v) sum += x;
          ps.mean = sum / static_cast<double>(v.size());
          double ss = 0.0;
          for (double x : v) ss += (x - ps.mean) * (x - ps.mean);
          ps.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
          if (cfg.percentile_ci) {
            ps.lower = detail::sample_quantile(v, 0.5 * (1.0 - cfg.ci_level));
            ps.upper = detail::sample_quantile(v, 0.5 * (1.0 + cfg.ci_level));
          } else {
            ps.lower = ps.mean - z * ps.sd;
            ps.upper = ps.mean + z * ps.sd;
          }
          if (k == kb || k == kb + kz) {
            const double lo = std::clamp(ps.lower, 0.0, 1.0);
            const double hi = std::clamp(ps.upper, 0.0, 1.0);
            ps.truncated = lo != ps.lower || hi != ps.upper;
            ps.lower = lo;
            ps.upper = hi;
          }
        }
        est.parameters.push_back(ps);
      }
      s.estimates.push_back(std::move(est));
    }
  }
  return s;
}

}  // namespace fourpl
