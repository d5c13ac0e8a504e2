#pragma once

// Command-line front end: fit, dif, simulate, init and curves.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 a requested fit crashed.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/version.hpp>
#include <CLI11.hpp>
#include <Eigen/Core>

#include "estimators.hpp"
#include "inference.hpp"
#include "initialization.hpp"
#include "io.hpp"
#include "simulation.hpp"

namespace fourpl {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitCrashed = 4 };

struct CliOptions {
  std::string data_path;
  std::string schema_path;
  std::vector<std::string> items;
  std::string criterion = "derive";
  std::string group;
  std::vector<std::string> covariates;
  int cut = 2;
  std::string model = "simple";
  std::string method = "mle";
  int max_iter = 2000;
  double tol = 1e-6;
  std::optional<std::uint64_t> seed;
  double alpha = 0.05;
  double level = 0.95;
  bool weighted_nls = false;
  std::string out;
  std::string input;  // simulate: config file; curves: report file
  std::optional<unsigned> threads;
};

namespace detail {

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << text;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  try {
    return Json::parse(f);
  } catch (const Json::exception& e) {
    throw DataError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline ColumnSchema schema_from(const CliOptions& o) {
  ColumnSchema s;
  if (!o.schema_path.empty()) {
    const Json j = read_json_file(o.schema_path);
    try {
      s.item_columns = j.at("items").get<std::vector<std::string>>();
      s.criterion_column = j.value("criterion", std::string("derive"));
      if (j.contains("group") && !j.at("group").is_null()) s.group_column = j.at("group").get<std::string>();
      s.asymptote_covariates = j.value("covariates", std::vector<std::string>{});
    } catch (const Json::exception& e) {
      throw DataError("invalid schema file: " + std::string(e.what()));
    }
  } else {
    s.item_columns = o.items;
    s.criterion_column = o.criterion;
    if (!o.group.empty()) s.group_column = o.group;
    s.asymptote_covariates = o.covariates;
  }
  if (o.model == "group" && !s.group_column) throw DataError("group model needs a group column");
  return s;
}

inline FitOptions fit_options_from(const CliOptions& o) {
  FitOptions f;
  f.max_iterations = o.max_iter;
  f.tolerance = o.tol;
  f.weighted_nls = o.weighted_nls;
  return f;
}

inline Json provenance(const CliOptions& o, std::string_view command) {
  std::ostringstream eigen;
  eigen << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION;
  std::ostringstream boost;
  boost << BOOST_VERSION / 100000 << '.' << BOOST_VERSION / 100 % 1000 << '.' << BOOST_VERSION % 100;
  return Json{{"tool", "fourpl"},
              {"tool_version", kToolVersion},
              {"command", command},
              {"seed", o.seed ? Json(*o.seed) : Json(nullptr)},
              {"options",
               Json{{"model", o.model},
                    {"method", o.method},
                    {"max_iterations", o.max_iter},
                    {"tolerance", o.tol},
                    {"weighted_nls", o.weighted_nls},
                    {"alpha", o.alpha},
                    {"level", o.level},
                    {"cut", o.cut}}},
              {"libraries", Json{{"eigen", eigen.str()}, {"boost", boost.str()}, {"nlohmann_json", "3.11.3"}}}};
}

inline Json data_block(const CliOptions& o, const LoadedTable& loaded, const ItemBank& bank) {
  return Json{{"path", o.data_path},
              {"respondents", bank.criterion.size()},
              {"criterion", o.criterion},
              {"dichotomised", bank.dichotomised},
              {"rejected_rows", loaded.rejected_rows},
              {"diagnostics", loaded.diagnostics}};
}

struct ItemFit {
  ModelSpec spec;
  Dataset data;
  ItemParameters init;
  FitResult fit;
  std::optional<Method> donor;
};

/// Fits `method`; when it crashes, refits from the estimates of the first
/// donor in MLE, PLF, EM, NLS order that converges.
inline ItemFit fit_item(const ItemBank& bank, std::size_t item, ModelKind kind, Method method,
                        const FitOptions& opts, bool retry) {
  ItemFit r;
  auto [spec, table] = item_table(bank, item, kind);
  r.spec = spec;
  r.data = build_design(spec, table);
  r.init = initial_values(r.data, spec).first;
  r.fit = fit(method, r.data, r.init, opts);
  if (!retry || r.fit.status != ConvergenceStatus::Crashed) return r;
  for (Method donor : {Method::MLE, Method::PLF, Method::EM, Method::NLS}) {
    if (donor == method) continue;
    const FitResult seed_fit = fit(donor, r.data, r.init, opts);
    if (!seed_fit.converged()) continue;
    FitResult again = fit(method, r.data, seed_fit.params, opts);
    if (again.status != ConvergenceStatus::Crashed) {
      r.fit = std::move(again);
      r.donor = donor;
      return r;
    }
  }
  return r;
}

inline Json item_entry(const std::string& name, const ItemFit& f, double level) {
  const auto names = f.spec.parameter_names();
  Json entry{{"item", name},
             {"model", to_string(f.spec.kind)},
             {"initial", parameters_json(f.init, names)},
             {"retry_donor", f.donor ? Json(to_string(*f.donor)) : Json(nullptr)},
             {"fit", to_json(f.fit, names)}};
  Json cov = nullptr, cov_error = nullptr, intervals = Json::array(), levels = Json::array();
  if (f.fit.converged()) {
    try {
      const auto c = default_covariance(f.fit, f.data);
      cov = Json{{"kind", to_string(c.kind)},
                 {"active_constraints", c.active_constraints},
                 {"matrix", detail::matrix_json(c.matrix)}};
      for (const auto& ci : wald_intervals(f.fit, c, level, names)) intervals.push_back(to_json(ci));
      for (const auto& ci : asymptote_intervals(f.fit, c, unique_rows(f.data.z), level)) levels.push_back(to_json(ci));
    } catch (const std::exception& e) {
      cov_error = e.what();
    }
  } else {
    cov_error = "fit did not converge";
  }
  entry["covariance"] = cov;
  entry["covariance_error"] = cov_error;
  entry["intervals"] = intervals;
  entry["asymptote_intervals"] = levels;
  const auto curves = f.fit.status == ConvergenceStatus::Crashed
                          ? std::nullopt
                          : item_curves(f.fit.params, f.spec, f.data.criterion());
  entry["curves"] = curves ? to_json(*curves) : Json(nullptr);
  return entry;
}

// -- subcommands -------------------------------------------------------------

inline int cmd_fit(const CliOptions& o, std::ostream& out) {
  const ColumnSchema schema = schema_from(o);
  const auto loaded = load_dataset(o.data_path, schema);
  const ItemBank bank = prepare_items(loaded, schema, o.cut);
  const ModelKind kind = parse_model(o.model);
  const Method method = parse_method(o.method);
  const FitOptions opts = fit_options_from(o);
  Json items = Json::array();
  bool crashed = false;
  for (std::size_t i = 0; i < bank.items.size(); ++i) {
    const ItemFit f = fit_item(bank, i, kind, method, opts, false);
    crashed = crashed || f.fit.status == ConvergenceStatus::Crashed;
    items.push_back(item_entry(bank.items[i], f, o.level));
  }
  Json report{{"schema_version", kSchemaVersion},
              {"provenance", provenance(o, "fit")},
              {"data", data_block(o, loaded, bank)},
              {"items", items},
              {"dif", Json::array()}};
  write_output(o.out, dump(report), out);
  return crashed ? kExitCrashed : kExitOk;
}

inline int cmd_dif(const CliOptions& o, std::ostream& out) {
  const ColumnSchema schema = schema_from(o);
  if (!schema.group_column) throw DataError("dif needs a group column");
  const auto loaded = load_dataset(o.data_path, schema);
  const ItemBank bank = prepare_items(loaded, schema, o.cut);
  const Method method = parse_method(o.method);
  const FitOptions opts = fit_options_from(o);
  Json items = Json::array();
  Json tests = Json::array();
  bool crashed = false;
  for (std::size_t i = 0; i < bank.items.size(); ++i) {
    const ItemFit simple = fit_item(bank, i, ModelKind::Simple, method, opts, true);
    const ItemFit group = fit_item(bank, i, ModelKind::GroupSpecific, method, opts, true);
    crashed = crashed || simple.fit.status == ConvergenceStatus::Crashed ||
              group.fit.status == ConvergenceStatus::Crashed;
    items.push_back(item_entry(bank.items[i], simple, o.level));
    items.push_back(item_entry(bank.items[i], group, o.level));
    Json t{{"item", bank.items[i]}, {"method", to_string(method)}};
    try {
      t["test"] = to_json(lrt_dif(simple.fit, group.fit, o.alpha));
      t["error"] = nullptr;
    } catch (const std::exception& e) {
      t["test"] = nullptr;
      t["error"] = e.what();
    }
    tests.push_back(t);
  }
  Json report{{"schema_version", kSchemaVersion},
              {"provenance", provenance(o, "dif")},
              {"data", data_block(o, loaded, bank)},
              {"items", items},
              {"dif", tests}};
  write_output(o.out, dump(report), out);
  return crashed ? kExitCrashed : kExitOk;
}

inline int cmd_init(const CliOptions& o, std::ostream& out) {
  const ColumnSchema schema = schema_from(o);
  const auto loaded = load_dataset(o.data_path, schema);
  const ItemBank bank = prepare_items(loaded, schema, o.cut);
  const ModelKind kind = parse_model(o.model);
  Json items = Json::array();
  for (std::size_t i = 0; i < bank.items.size(); ++i) {
    auto [spec, table] = item_table(bank, i, kind);
    const Dataset data = build_design(spec, table);
    const auto [params, diag] = initial_values(data, spec);
    items.push_back(Json{{"item", bank.items[i]},
                         {"model", to_string(spec.kind)},
                         {"parameters", parameters_json(params, spec.parameter_names())},
                         {"diagnostics", to_json(diag)}});
  }
  Json doc{{"schema_version", kSchemaVersion},
           {"provenance", provenance(o, "init")},
           {"data", data_block(o, loaded, bank)},
           {"items", items}};
  write_output(o.out, dump(doc), out);
  return kExitOk;
}

inline int cmd_simulate(const CliOptions& o, std::ostream& out) {
  SimulationConfig cfg = simulation_config_from_json(read_json_file(o.input));
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  const auto records = run_study(cfg);
  const auto summary = summarise_study(records, cfg);
  const std::string json = dump(to_json(summary, cfg));
  if (o.out.empty() || o.out == "-") {
    out << json;
    return kExitOk;
  }
  std::error_code ec;
  std::filesystem::create_directories(o.out, ec);
  if (ec) throw DataError("cannot create '" + o.out + "': " + ec.message());
  const std::filesystem::path dir(o.out);
  write_output((dir / "summary.json").string(), json, out);
  write_output((dir / "status.csv").string(), status_csv(summary), out);
  write_output((dir / "estimates.csv").string(), estimates_csv(summary), out);
  return kExitOk;
}

/// ReportBundle -> item,model,group,x,pi rows, recomputed from the reported
/// parameters on the reported grid.
inline int cmd_curves(const CliOptions& o, std::ostream& out) {
  const Json report = read_json_file(o.input);
  std::ostringstream csv;
  csv << "item,model,group,x,pi\n";
  try {
    for (const auto& item : report.at("items")) {
      if (item.at("curves").is_null()) continue;
      const std::string model = item.at("model").get<std::string>();
      const ModelKind kind = parse_model(model);
      Vector gamma(static_cast<Index>(item.at("fit").at("parameters").size()));
      Index k = 0;
      for (const auto& p : item.at("fit").at("parameters")) gamma[k++] = p.at("estimate").get<double>();
      const ModelSpec spec = kind == ModelKind::Simple ? ModelSpec::simple() : ModelSpec::group_specific();
      const auto params = ItemParameters::unpack(gamma, spec.predictor_size(), spec.asymptote_size());
      const auto xs = item.at("curves").at("x").get<std::vector<double>>();
      for (const auto& curve : item.at("curves").at("curves")) {
        const double g = curve.at("group").get<double>();
        for (double x : xs) {
          const Vector xr = kind == ModelKind::Simple ? Vector{{1.0, x}} : Vector{{1.0, x, g, g * x}};
          const Vector zr = kind == ModelKind::Simple ? Vector{{1.0}} : Vector{{1.0, g}};
          csv << item.at("item").get<std::string>() << ',' << model << ',' << detail::csv_number(g) << ','
              << detail::csv_number(x) << ',' << detail::csv_number(predict_prob(params, xr, zr).pi) << '\n';
        }
      }
    }
  } catch (const Json::exception& e) {
    throw DataError("'" + o.input + "' is not a fit report: " + e.what());
  }
  write_output(o.out, csv.str(), out);
  return kExitOk;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CliOptions o;
  CLI::App app{"Four-parameter logistic item models: fitting, DIF tests and simulation", "fourpl"};
  app.require_subcommand(1);

  auto add_data = [&](CLI::App* sub) {
    sub->add_option("data", o.data_path, "CSV file with a header row")->required()->check(CLI::ExistingFile);
    auto* schema = sub->add_option("--schema", o.schema_path, "JSON column schema (items, criterion, group, covariates)")
                       ->check(CLI::ExistingFile);
    sub->add_option("--items", o.items, "item response columns")->delimiter(',')->excludes(schema);
    sub->add_option("--criterion", o.criterion, "matching criterion column, or 'derive'")->excludes(schema);
    sub->add_option("--group", o.group, "0/1 group column")->excludes(schema);
    sub->add_option("--covariates", o.covariates, "extra covariates for both designs")->delimiter(',')->excludes(schema);
    sub->add_option("--cut", o.cut, "dichotomisation cut for 1..5 responses")->check(CLI::Range(1, 6));
  };
  auto add_fit = [&](CLI::App* sub) {
    sub->add_option("--method", o.method, "nls|mle|em|plf")->check(CLI::IsMember({"nls", "mle", "em", "plf"}));
    sub->add_option("--max-iter", o.max_iter, "iteration cap")->check(CLI::PositiveNumber);
    sub->add_option("--tol", o.tol, "convergence tolerance")->check(CLI::PositiveNumber);
    sub->add_flag("--weighted-nls", o.weighted_nls, "divide squared residuals by pi(1 - pi)");
    sub->add_option("--level", o.level, "Wald interval level")->check(CLI::Range(0.5, 0.9999));
    sub->add_option("--seed", o.seed, "recorded in the provenance block");
  };

  auto* fit_cmd = app.add_subcommand("fit", "fit every item and emit a report");
  add_data(fit_cmd);
  add_fit(fit_cmd);
  fit_cmd->add_option("--model", o.model, "simple|group")->check(CLI::IsMember({"simple", "group"}));
  fit_cmd->add_option("--out", o.out, "report path (default stdout)");

  auto* dif_cmd = app.add_subcommand("dif", "likelihood-ratio DIF test for every item");
  add_data(dif_cmd);
  add_fit(dif_cmd);
  dif_cmd->add_option("--alpha", o.alpha, "significance level")->check(CLI::Range(1e-12, 0.999999));
  dif_cmd->add_option("--out", o.out, "report path (default stdout)");

  auto* init_cmd = app.add_subcommand("init", "starting values and their diagnostics");
  add_data(init_cmd);
  init_cmd->add_option("--model", o.model, "simple|group")->check(CLI::IsMember({"simple", "group"}));
  init_cmd->add_option("--out", o.out, "output path (default stdout)");

  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo study from a JSON config");
  sim_cmd->add_option("config", o.input, "simulation config JSON")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--seed", o.seed, "override the config seed");
  sim_cmd->add_option("--threads", o.threads, "worker threads, 0 for all cores");
  sim_cmd->add_option("--out", o.out, "directory for summary.json, status.csv, estimates.csv (default: JSON to stdout)");

  auto* curves_cmd = app.add_subcommand("curves", "curve samples from a fit report as CSV");
  curves_cmd->add_option("report", o.input, "report JSON from fit or dif")->required()->check(CLI::ExistingFile);
  curves_cmd->add_option("--out", o.out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "fourpl: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (fit_cmd->parsed()) return detail::cmd_fit(o, out);
    if (dif_cmd->parsed()) return detail::cmd_dif(o, out);
    if (init_cmd->parsed()) return detail::cmd_init(o, out);
    if (sim_cmd->parsed()) return detail::cmd_simulate(o, out);
    if (curves_cmd->parsed()) return detail::cmd_curves(o, out);
  } catch (const DataError& e) {
    err << "fourpl: " << e.what() << "\n";
    return kExitData;
  } catch (const ModelError& e) {
    err << "fourpl: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "fourpl: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace fourpl
