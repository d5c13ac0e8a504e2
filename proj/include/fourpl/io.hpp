#pragma once

// CSV ingestion, the item scoring pipeline, and JSON/CSV serialisation of
// fits, tests and simulation summaries.

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "estimators.hpp"
#include "inference.hpp"
#include "initialization.hpp"
#include "model.hpp"
#include "simulation.hpp"

namespace fourpl {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kToolVersion = "1.0.0";
inline constexpr std::string_view kSchemaVersion = "1.0";

class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Column schema and CSV loading

struct ColumnSchema {
  std::vector<std::string> item_columns;
  std::string criterion_column = "derive";  // "derive": standardised sum of the items
  std::optional<std::string> group_column;
  std::vector<std::string> asymptote_covariates;

  bool derive_criterion() const { return criterion_column == "derive"; }

  /// Every column the schema reads from the file, in first-use order.
  std::vector<std::string> referenced() const {
    std::vector<std::string> out = item_columns;
    if (!derive_criterion()) out.push_back(criterion_column);
    if (group_column) out.push_back(*group_column);
    out.insert(out.end(), asymptote_covariates.begin(), asymptote_covariates.end());
    return out;
  }

  void validate() const {
    if (item_columns.empty()) throw DataError("schema lists no item columns");
    const auto names = referenced();
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (n.empty()) throw DataError("schema contains an empty column name");
      if (!seen.insert(n).second) throw DataError("schema names column '" + n + "' more than once");
    }
  }
};

struct LoadedTable {
  Table table;                           // referenced columns only
  std::vector<std::string> diagnostics;  // one line per rejected row
  std::vector<std::size_t> rejected_rows;  // 1-based data row numbers
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(a, b - a + 1));
}

/// Splits one CSV line; double quotes group a field and "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  if (quoted) throw DataError("unterminated quoted field");
  out.push_back(trim(field));
  return out;
}

inline bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "na" || cell == ".";
}

inline std::optional<double> parse_number(const std::string& cell) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a comma-separated file with a header row. Columns named by the
/// schema are checked before any data row is parsed. Rows with a missing
/// value in a referenced column are dropped and reported.
inline LoadedTable load_dataset(const std::string& path, const ColumnSchema& schema) {
  schema.validate();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: '" + path + "'");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (detail::trim(line).empty()) throw DataError("empty header in '" + path + "'");

  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) throw DataError("empty column name at position " + std::to_string(j + 1));
    if (!index.emplace(header[j], j).second) throw DataError("duplicate header column '" + header[j] + "'");
  }
  const auto wanted = schema.referenced();
  std::vector<std::size_t> pos;
  for (const auto& name : wanted) {
    const auto it = index.find(name);
    if (it == index.end()) throw DataError("missing column: " + name);
    pos.push_back(it->second);
  }

  LoadedTable out;
  std::vector<std::vector<double>> cols(wanted.size());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(cells.size()));
    std::vector<std::string> missing;
    for (std::size_t k = 0; k < wanted.size(); ++k)
      if (detail::is_missing(cells[pos[k]])) missing.push_back(wanted[k]);
    if (!missing.empty()) {
      std::string msg = "row " + std::to_string(row) + ": missing value in";
      for (const auto& m : missing) msg += " " + m;
      out.diagnostics.push_back(msg);
      out.rejected_rows.push_back(row);
      continue;
    }
    for (std::size_t k = 0; k < wanted.size(); ++k) {
      const auto v = detail::parse_number(cells[pos[k]]);
      if (!v)
        throw DataError("row " + std::to_string(row) + ", column " + wanted[k] + ": non-numeric value '" +
                        cells[pos[k]] + "'");
      cols[k].push_back(*v);
    }
  }
  if (cols.front().empty()) throw DataError("no complete data rows in '" + path + "'");
  for (std::size_t k = 0; k < wanted.size(); ++k) out.table.add(wanted[k], std::move(cols[k]));
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

/// 1 where response >= cut, else 0. Responses must be integers 1..5.
inline Matrix dichotomise(const Matrix& responses, int cut = 2) {
  Matrix out(responses.rows(), responses.cols());
  for (Index i = 0; i < responses.rows(); ++i)
    for (Index j = 0; j < responses.cols(); ++j) {
      const double v = responses(i, j);
      if (!(v >= 1.0 && v <= 5.0 && v == std::floor(v)))
        throw DataError("response " + std::to_string(v) + " at row " + std::to_string(i + 1) + " is outside 1..5");
      out(i, j) = v >= cut ? 1.0 : 0.0;
    }
  return out;
}

/// Row sums centred to mean 0 and scaled to unit sample standard deviation.
inline Vector standardised_score(const Matrix& responses) {
  if (responses.rows() < 2) throw DataError("standardised score needs at least 2 respondents");
  const Vector sums = responses.rowwise().sum();
  const double n = static_cast<double>(sums.size());
  const double mean = sums.sum() / n;
  const Vector centred = sums.array() - mean;
  const double sd = std::sqrt(centred.squaredNorm() / (n - 1.0));
  if (!(sd > 0.0)) throw DataError("standardised score has zero variance");
  return centred / sd;
}

/// Item responses plus the matching criterion and optional group and covariates.
struct ItemBank {
  std::vector<std::string> items;
  Matrix responses;  // binary, respondents x items
  Vector criterion;
  std::optional<Vector> group;
  std::vector<std::string> covariate_names;
  Matrix covariates;  // respondents x covariates
  bool dichotomised = false;
};

namespace detail {

inline Matrix columns_as_matrix(const Table& t, const std::vector<std::string>& names) {
  Matrix m(static_cast<Index>(t.rows()), static_cast<Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto& col = t.column(names[j]);
    for (std::size_t i = 0; i < col.size(); ++i) m(static_cast<Index>(i), static_cast<Index>(j)) = col[i];
  }
  return m;
}

inline bool all_binary(const Matrix& m) {
  return ((m.array() == 0.0) || (m.array() == 1.0)).all();
}

}  // namespace detail

/// Scoring pipeline. A derived criterion needs 1..5 responses and uses
/// their standardised sum; items are then dichotomised at `cut`. With a
/// criterion column, 0/1 items are used as they are and 1..5 items are
/// dichotomised.
inline ItemBank prepare_items(const LoadedTable& loaded, const ColumnSchema& schema, int cut = 2) {
  ItemBank bank;
  bank.items = schema.item_columns;
  const Matrix raw = detail::columns_as_matrix(loaded.table, schema.item_columns);
  if (schema.derive_criterion()) {
    bank.responses = dichotomise(raw, cut);
    bank.criterion = standardised_score(raw);
    bank.dichotomised = true;
  } else {
    if (detail::all_binary(raw)) {
      bank.responses = raw;
    } else {
      bank.responses = dichotomise(raw, cut);
      bank.dichotomised = true;
    }
    const auto& crit = loaded.table.column(schema.criterion_column);
    bank.criterion = Eigen::Map<const Vector>(crit.data(), static_cast<Index>(crit.size()));
  }
  if (schema.group_column) {
    const auto& g = loaded.table.column(*schema.group_column);
    bank.group = Eigen::Map<const Vector>(g.data(), static_cast<Index>(g.size()));
  }
  bank.covariate_names = schema.asymptote_covariates;
  bank.covariates = detail::columns_as_matrix(loaded.table, schema.asymptote_covariates);
  return bank;
}

/// Named-column table and model layout for one item. Covariates enter both
/// designs after the criterion (and group terms).
inline std::pair<ModelSpec, Table> item_table(const ItemBank& bank, std::size_t item, ModelKind kind) {
  Table t;
  const Vector y = bank.responses.col(static_cast<Index>(item));
  t.add("y", std::vector<double>(y.data(), y.data() + y.size()));
  t.add("x", std::vector<double>(bank.criterion.data(), bank.criterion.data() + bank.criterion.size()));
  const bool grouped = kind == ModelKind::GroupSpecific;
  if (grouped) {
    if (!bank.group) throw DataError("group model needs a group column");
    t.add("g", std::vector<double>(bank.group->data(), bank.group->data() + bank.group->size()));
  }
  if (bank.covariate_names.empty()) {
    return {grouped ? ModelSpec::group_specific() : ModelSpec::simple(), std::move(t)};
  }
  ModelSpec spec;
  spec.kind = ModelKind::General;
  spec.predictor_columns = {"x"};
  if (grouped) {
    std::vector<double> gx(bank.criterion.size());
    for (Index p = 0; p < bank.criterion.size(); ++p) gx[static_cast<std::size_t>(p)] = (*bank.group)[p] * bank.criterion[p];
    t.add("g_x", std::move(gx));
    spec.predictor_columns.insert(spec.predictor_columns.end(), {"g", "g_x"});
    spec.asymptote_columns.push_back("g");
  }
  for (std::size_t j = 0; j < bank.covariate_names.size(); ++j) {
    const Vector col = bank.covariates.col(static_cast<Index>(j));
    t.add(bank.covariate_names[j], std::vector<double>(col.data(), col.data() + col.size()));
    spec.predictor_columns.push_back(bank.covariate_names[j]);
    spec.asymptote_columns.push_back(bank.covariate_names[j]);
  }
  return {std::move(spec), std::move(t)};
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

}  // namespace detail

inline Json to_json(const ConfidenceInterval& ci) {
  return Json{{"name", ci.name},
              {"estimate", detail::number(ci.estimate)},
              {"lower", detail::number(ci.lower)},
              {"upper", detail::number(ci.upper)},
              {"level", ci.level},
              {"truncated", ci.truncated}};
}

inline Json to_json(const DifTestResult& t) {
  return Json{{"statistic", detail::number(t.statistic)},
              {"raw_statistic", detail::number(t.raw_statistic)},
              {"df", t.df},
              {"p_value", detail::number(t.p_value)},
              {"alpha", t.alpha},
              {"flagged", t.flagged},
              {"negative_statistic", t.negative_statistic},
              {"boundary_warning", t.boundary_warning}};
}

inline Json parameters_json(const ItemParameters& params, const std::vector<std::string>& names) {
  Json out = Json::array();
  const Vector g = params.pack();
  for (Index k = 0; k < g.size(); ++k)
    out.push_back(Json{{"name", names[static_cast<std::size_t>(k)]}, {"estimate", detail::number(g[k])}});
  return out;
}

inline Json to_json(const FitResult& fit, const std::vector<std::string>& names) {
  return Json{{"method", to_string(fit.method)},
              {"status", to_string(fit.status)},
              {"iterations", fit.iterations},
              {"objective_label", fit.objective_label},
              {"objective", detail::number(fit.objective)},
              {"log_likelihood", detail::number(fit.log_likelihood)},
              {"respondents", fit.respondents},
              {"boundary_slack", detail::number(fit.boundary_slack)},
              {"message", fit.message},
              {"parameters", parameters_json(fit.params, names)}};
}

inline Json to_json(const InitDiagnostics& d) {
  return Json{{"tertile_bounds", Json::array({d.tertile_low, d.tertile_high})},
              {"p_lower", d.p_lower},
              {"p_upper", d.p_upper},
              {"uli", d.uli},
              {"midpoint_level", d.midpoint_level},
              {"crossing_found", d.crossing_found}};
}

// ---------------------------------------------------------------------------
// Item characteristic curves

inline constexpr int kCurvePoints = 201;

struct CurveSamples {
  std::vector<double> x;
  std::vector<double> groups;             // group value per curve; empty group list means one curve
  std::vector<std::vector<double>> pi;    // one row per curve
};

/// pi on 201 equally spaced points over [min X - 0.5, max X + 0.5], one
/// curve per group. Only the simple and group-specific layouts have curves.
inline std::optional<CurveSamples> item_curves(const ItemParameters& params, const ModelSpec& spec,
                                               const Vector& criterion) {
  if (spec.kind == ModelKind::General) return std::nullopt;
  CurveSamples cs;
  const double lo = criterion.minCoeff() - 0.5;
  const double hi = criterion.maxCoeff() + 0.5;
  for (int i = 0; i < kCurvePoints; ++i) cs.x.push_back(lo + (hi - lo) * i / (kCurvePoints - 1));
  cs.groups = spec.kind == ModelKind::GroupSpecific ? std::vector<double>{0.0, 1.0} : std::vector<double>{0.0};
  for (double g : cs.groups) {
    std::vector<double> row;
    for (double x : cs.x) {
      Vector xr, zr;
      if (spec.kind == ModelKind::GroupSpecific) {
        xr = Vector{{1.0, x, g, g * x}};
        zr = Vector{{1.0, g}};
      } else {
        xr = Vector{{1.0, x}};
        zr = Vector{{1.0}};
      }
      row.push_back(predict_prob(params, xr, zr).pi);
    }
    cs.pi.push_back(std::move(row));
  }
  return cs;
}

inline Json to_json(const CurveSamples& cs) {
  Json curves = Json::array();
  for (std::size_t k = 0; k < cs.groups.size(); ++k)
    curves.push_back(Json{{"group", cs.groups[k]}, {"pi", cs.pi[k]}});
  return Json{{"x", cs.x}, {"curves", curves}};
}

// ---------------------------------------------------------------------------
// Simulation configuration and summary

inline Method parse_method(std::string_view s) {
  if (s == "nls") return Method::NLS;
  if (s == "mle") return Method::MLE;
  if (s == "em") return Method::EM;
  if (s == "plf") return Method::PLF;
  throw DataError("unknown method '" + std::string(s) + "'");
}

inline ModelKind parse_model(std::string_view s) {
  if (s == "simple") return ModelKind::Simple;
  if (s == "group") return ModelKind::GroupSpecific;
  throw DataError("unknown model '" + std::string(s) + "'");
}

namespace detail {

inline Vector vector_from(const Json& j, std::string_view what) {
  if (!j.is_array()) throw DataError(std::string(what) + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw DataError(std::string(what) + " must hold numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

}  // namespace detail

inline SimulationConfig simulation_config_from_json(const Json& j) {
  if (!j.is_object()) throw DataError("simulation config must be a JSON object");
  static const std::set<std::string> known{"model", "truth", "sample_sizes", "replications", "seed",
                                           "methods", "max_iterations", "tolerance", "weighted_nls",
                                           "threads", "percentile_ci", "ci_level", "covariance_diagnostics"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw DataError("unknown simulation config key '" + key + "'");
  try {
    SimulationConfig cfg;
    cfg.kind = parse_model(j.value("model", std::string("simple")));
    cfg.truth = TrueParameters::defaults(cfg.kind);
    if (j.contains("truth")) {
      const auto& t = j.at("truth");
      if (t.contains("b")) cfg.truth.b = detail::vector_from(t.at("b"), "truth.b");
      if (t.contains("c")) cfg.truth.c = detail::vector_from(t.at("c"), "truth.c");
      if (t.contains("d")) cfg.truth.d = detail::vector_from(t.at("d"), "truth.d");
    }
    if (j.contains("sample_sizes")) {
      cfg.sample_sizes.clear();
      for (const auto& n : j.at("sample_sizes")) cfg.sample_sizes.push_back(n.get<Index>());
    }
    cfg.replications = j.value("replications", cfg.replications);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("methods")) {
      cfg.methods.clear();
      for (const auto& m : j.at("methods")) cfg.methods.push_back(parse_method(m.get<std::string>()));
    }
    cfg.fit_options.max_iterations = j.value("max_iterations", cfg.fit_options.max_iterations);
    cfg.fit_options.tolerance = j.value("tolerance", cfg.fit_options.tolerance);
    cfg.fit_options.weighted_nls = j.value("weighted_nls", cfg.fit_options.weighted_nls);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.percentile_ci = j.value("percentile_ci", cfg.percentile_ci);
    cfg.ci_level = j.value("ci_level", cfg.ci_level);
    cfg.covariance_diagnostics = j.value("covariance_diagnostics", cfg.covariance_diagnostics);
    cfg.validate();
    return cfg;
  } catch (const Json::exception& e) {
    throw DataError(std::string("invalid simulation config: ") + e.what());
  } catch (const ModelError& e) {
    throw DataError(std::string("invalid simulation config: ") + e.what());
  }
}

inline Json to_json(const SimulationConfig& cfg) {
  Json methods = Json::array();
  for (Method m : cfg.methods) methods.push_back(to_string(m));
  return Json{{"model", to_string(cfg.kind)},
              {"truth", Json{{"b", detail::vector_json(cfg.truth.b)},
                             {"c", detail::vector_json(cfg.truth.c)},
                             {"d", detail::vector_json(cfg.truth.d)}}},
              {"sample_sizes", cfg.sample_sizes},
              {"replications", cfg.replications},
              {"seed", cfg.seed},
              {"methods", methods},
              {"max_iterations", cfg.fit_options.max_iterations},
              {"tolerance", cfg.fit_options.tolerance},
              {"weighted_nls", cfg.fit_options.weighted_nls},
              {"percentile_ci", cfg.percentile_ci},
              {"ci_level", cfg.ci_level}};
}

inline Json to_json(const SimulationSummary& s, const SimulationConfig& cfg) {
  Json status = Json::array();
  for (const auto& c : s.status)
    status.push_back(Json{{"n", c.sample_size},
                          {"method", to_string(c.method)},
                          {"replications", c.total},
                          {"converged", c.converged},
                          {"crashed", c.crashed},
                          {"dnf", c.dnf},
                          {"converged_pct", c.converged_pct},
                          {"crashed_pct", c.crashed_pct},
                          {"dnf_pct", c.dnf_pct},
                          {"iterations_mean", detail::number(c.iterations_mean)},
                          {"iterations_median", detail::number(c.iterations_median)}});
  Json estimates = Json::array();
  for (const auto& e : s.estimates) {
    Json params = Json::array();
    for (const auto& p : e.parameters)
      params.push_back(Json{{"name", p.name},
                            {"truth", p.truth},
                            {"mean", detail::number(p.mean)},
                            {"sd", detail::number(p.sd)},
                            {"lower", detail::number(p.lower)},
                            {"upper", detail::number(p.upper)},
                            {"truncated", p.truncated}});
    estimates.push_back(Json{{"n", e.sample_size},
                             {"method", to_string(e.method)},
                             {"joint_converged", e.count},
                             {"empty", e.empty},
                             {"parameters", params}});
  }
  return Json{{"schema_version", kSchemaVersion},
              {"tool_version", kToolVersion},
              {"config", to_json(cfg)},
              {"interval", s.percentile_ci ? "percentile" : "normal"},
              {"status", status},
              {"estimates", estimates}};
}

namespace detail {

/// Shortest representation that reads back to the same double.
inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// One row per sample size and method: convergence status and iterations.
inline std::string status_csv(const SimulationSummary& s) {
  std::ostringstream os;
  os << "model,n,method,converged_pct,crashed_pct,dnf_pct,iterations_mean,iterations_median\n";
  for (const auto& c : s.status)
    os << to_string(s.kind) << ',' << c.sample_size << ',' << display_name(c.method) << ','
       << detail::csv_number(c.converged_pct) << ',' << detail::csv_number(c.crashed_pct) << ','
       << detail::csv_number(c.dnf_pct) << ',' << detail::csv_number(c.iterations_mean) << ','
       << detail::csv_number(c.iterations_median) << '\n';
  return os.str();
}

/// One row per sample size and method; mean, lower, upper per parameter.
inline std::string estimates_csv(const SimulationSummary& s) {
  std::ostringstream os;
  os << "n,method,joint_converged";
  if (!s.estimates.empty())
    for (const auto& p : s.estimates.front().parameters) os << ',' << p.name << ',' << p.name << "_lower," << p.name << "_upper";
  os << '\n';
  for (const auto& e : s.estimates) {
    os << e.sample_size << ',' << display_name(e.method) << ',' << e.count;
    for (const auto& p : e.parameters)
      os << ',' << detail::csv_number(p.mean) << ',' << detail::csv_number(p.lower) << ','
         << detail::csv_number(p.upper);
    os << '\n';
  }
  return os.str();
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace fourpl
