#include "distcal/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "distcal/calibration.hpp"
#include "distcal/errors.hpp"
#include "distcal/estimation.hpp"
#include "distcal/experiments.hpp"
#include "distcal/perturbation.hpp"
#include "distcal/report.hpp"

namespace distcal {

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "invalid JSON in " + path + ": " + e.what());
  }
}

struct CommonOptions {
  std::string config_path;
  std::string out_path;
  std::string format = "csv";
  std::optional<std::uint64_t> seed;
};

void write_output(const CommonOptions& opts, const OutputMeta& meta, const Table& table) {
  if (opts.format == "csv") {
    write_text_file(opts.out_path, table_to_csv(meta, table));
  } else if (opts.format == "json") {
    write_text_file(opts.out_path, table_to_json(meta, table).dump(2) + "\n");
  } else {
    throw Error(ErrorKind::Config, "unknown format: " + opts.format);
  }
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

int cmd_simulate_delta(const CommonOptions& opts) {
  nlohmann::json config_json = load_json(opts.config_path);
  ScmGridConfig config = ScmGridConfig::from_json(config_json);
  if (opts.seed) config.seed = *opts.seed;

  const std::vector<DeltaRow> rows = run_delta_experiment(config);
  Table table;
  table.header = {"n", "m", "model", "misspecified", "mean_delta_hat",
                  "q025", "q975", "true_delta", "failures"};
  for (const auto& r : rows)
    table.rows.push_back({std::to_string(r.n), std::to_string(r.m), r.model,
                          fmt_bool(r.misspecified), format_double(r.mean_delta),
                          format_double(r.q025), format_double(r.q975),
                          format_double(r.true_delta), std::to_string(r.failures)});
  write_output(opts, make_meta(config.to_json(), config.seed), table);
  return 0;
}

int cmd_simulate_coverage(const CommonOptions& opts) {
  nlohmann::json config_json = load_json(opts.config_path);
  ScmGridConfig config = ScmGridConfig::from_json(config_json);
  if (opts.seed) config.seed = *opts.seed;

  const std::vector<CoverageRow> rows = run_coverage_experiment(config);
  Table table;
  table.header = {"n", "m", "model", "misspecified", "estimator",
                  "naive_coverage", "calibrated_coverage", "failures"};
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.labels.size(); ++k)
      table.rows.push_back({std::to_string(r.n), std::to_string(r.m), r.model,
                            fmt_bool(r.misspecified), r.labels[k],
                            format_double(r.naive_coverage[k]),
                            format_double(r.scaled_coverage[k]), std::to_string(r.failures)});
    table.rows.push_back({std::to_string(r.n), std::to_string(r.m), r.model,
                          fmt_bool(r.misspecified), "weighted_t_interval", "",
                          format_double(r.weighted_coverage), std::to_string(r.failures)});
  }
  write_output(opts, make_meta(config.to_json(), config.seed), table);
  return 0;
}

int cmd_stability(const CommonOptions& opts) {
  nlohmann::json config_json = load_json(opts.config_path);

  std::vector<int> k_values;
  if (config_json.contains("n_covariate_sets") && config_json["n_covariate_sets"].is_array()) {
    k_values = config_json["n_covariate_sets"].get<std::vector<int>>();
    config_json.erase("n_covariate_sets");
  }

  StabilityConfig config = StabilityConfig::from_json(config_json);
  if (opts.seed) config.seed = *opts.seed;
  if (k_values.empty()) k_values = {config.n_covariate_sets};

  Table table;
  table.header = {"record", "method", "k_sets", "l", "similarity",
                  "covariate", "mean_length", "q025", "q975"};
  const Dataset data = load_student_data(config.data_path);
  for (int k : k_values) {
    StabilityConfig run = config;
    run.n_covariate_sets = k;
    const StabilityResult result = run_stability_experiment(run, data);
    for (const auto& row : result.similarity)
      for (std::size_t l = 0; l < row.similarity.size(); ++l)
        table.rows.push_back({"similarity", row.method, std::to_string(row.k_sets),
                              std::to_string(l + 1), format_double(row.similarity[l]), "",
                              "", "", ""});
    for (const auto& row : result.lengths)
      table.rows.push_back({"ci_length", row.method, std::to_string(row.k_sets), "", "",
                            row.covariate, format_double(row.mean_length),
                            format_double(row.q025), format_double(row.q975)});
  }
  nlohmann::json meta_config = config.to_json();
  meta_config["n_covariate_sets"] = k_values;
  write_output(opts, make_meta(meta_config, config.seed), table);
  return 0;
}

int cmd_probe(const CommonOptions& opts) {
  nlohmann::json config_json = load_json(opts.config_path);
  PerturbationSpec spec;
  std::vector<double> event_probs{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  long long replicates = 5000;
  std::uint64_t seed = 1;
  try {
    spec = PerturbationSpec::from_json(config_json.at("spec"));
    if (config_json.contains("event_probs"))
      event_probs = config_json.at("event_probs").get<std::vector<double>>();
    if (config_json.contains("replicates")) replicates = config_json.at("replicates").get<long long>();
    if (config_json.contains("seed")) seed = config_json.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("invalid probe config: ") + e.what());
  }
  if (opts.seed) seed = *opts.seed;

  RandomStream stream(seed, 0);
  const std::vector<ProbeRow> rows = variance_law_probe(spec, event_probs, replicates, stream);
  Table table;
  table.header = {"p", "variance", "std_error", "ratio"};
  for (const auto& r : rows)
    table.rows.push_back({format_double(r.p), format_double(r.variance),
                          format_double(r.std_error),
                          format_double(r.variance / (r.p * (1.0 - r.p)))});
  nlohmann::json meta_config = config_json;
  meta_config["seed"] = seed;
  write_output(opts, make_meta(meta_config, seed), table);
  return 0;
}

struct CalibrateOptions : CommonOptions {
  std::string data_path;
};

int cmd_calibrate(const CalibrateOptions& opts) {
  const nlohmann::json config = load_json(opts.config_path);

  std::string response, target;
  std::vector<std::vector<std::string>> set_names;
  double alpha = 0.05;
  bool auto_decorrelate = true;
  double ridge = 0.0;
  std::optional<int> trusted;
  char delimiter = ',';
  try {
    response = config.at("response").get<std::string>();
    target = config.at("target").get<std::string>();
    set_names = config.at("adjustment_sets").get<std::vector<std::vector<std::string>>>();
    if (config.contains("alpha")) alpha = config.at("alpha").get<double>();
    if (config.contains("decorrelate")) auto_decorrelate = config.at("decorrelate").get<bool>();
    if (config.contains("ridge")) ridge = config.at("ridge").get<double>();
    if (config.contains("trusted")) trusted = config.at("trusted").get<int>();
    if (config.contains("delimiter")) {
      const auto d = config.at("delimiter").get<std::string>();
      if (d.size() != 1) throw Error(ErrorKind::Config, "delimiter must be one character");
      delimiter = d[0];
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("invalid calibrate config: ") + e.what());
  }
  if (set_names.size() < 2)
    throw Error(ErrorKind::Config, "calibrate needs at least 2 adjustment sets");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error(ErrorKind::Config, "alpha must lie in (0,1)");
  if (trusted && (*trusted < 1 || *trusted > static_cast<int>(set_names.size())))
    throw Error(ErrorKind::Config, "trusted estimator index out of range (1-based)");
  if (trusted && set_names.size() < 3)
    throw Error(ErrorKind::InsufficientEstimators,
                "robust mode: insufficient estimators (need K >= 3)");

  const Dataset data = Dataset::from_csv(opts.data_path, response, delimiter);
  std::vector<AdjustmentSet> sets;
  sets.reserve(set_names.size());
  for (const auto& names : set_names)
    sets.push_back(AdjustmentSet::from_names(data, names, target));

  const EstimatorBundle bundle = build_bundle(data, sets);
  const CalibrationResult result = calibrated_ci(bundle, alpha, auto_decorrelate, ridge);
  std::optional<CalibrationResult> robust;
  if (trusted) robust = robust_ci(bundle, *trusted - 1, alpha);

  // Covariance condition diagnostics.
  const SymMatrix cov = influence_covariance(bundle);
  double max_corr = 0.0;
  for (int j = 0; j < cov.dim(); ++j)
    for (int k = j + 1; k < cov.dim(); ++k)
      max_corr = std::max(max_corr, std::fabs(cov.at(j, k)) /
                                        std::sqrt(cov.at(j, j) * cov.at(k, k)));
  const SymEigen eig = eigen_sym(cov);

  nlohmann::json estimators = nlohmann::json::array();
  for (int k = 0; k < bundle.K(); ++k) {
    const Interval naive = naive_ci(bundle.estimates[static_cast<std::size_t>(k)],
                                    bundle.variances[static_cast<std::size_t>(k)],
                                    bundle.n, alpha);
    const Interval scaled = scaled_estimator_ci(bundle, k, result.delta_hat, alpha);
    estimators.push_back(nlohmann::json{
        {"label", bundle.labels[static_cast<std::size_t>(k)]},
        {"estimate", bundle.estimates[static_cast<std::size_t>(k)]},
        {"variance", bundle.variances[static_cast<std::size_t>(k)]},
        {"naive", {naive.lower, naive.upper}},
        {"scaled", {scaled.lower, scaled.upper}}});
  }

  const OutputMeta meta = make_meta(config, opts.seed.value_or(0));
  nlohmann::json out{{"metadata", meta.to_json()},
                     {"result", result.to_json()},
                     {"estimators", estimators},
                     {"diagnostics",
                      {{"max_abs_correlation", max_corr},
                       {"cov_eigen_min", eig.values.front()},
                       {"cov_eigen_max", eig.values.back()},
                       {"n", bundle.n},
                       {"k", bundle.K()}}}};
  if (robust) out["robust"] = robust->to_json();

  if (opts.format == "json") {
    write_text_file(opts.out_path, out.dump(2) + "\n");
  } else if (opts.format == "csv") {
    Table table;
    table.header = {"row_type", "label", "estimate", "lower", "upper",
                    "delta_hat", "sigma_bet", "df", "degenerate"};
    for (int k = 0; k < bundle.K(); ++k) {
      const auto& est = estimators[static_cast<std::size_t>(k)];
      table.rows.push_back({"naive", est["label"].get<std::string>(),
                            format_double(est["estimate"].get<double>()),
                            format_double(est["naive"][0].get<double>()),
                            format_double(est["naive"][1].get<double>()), "", "", "", ""});
      table.rows.push_back({"scaled", est["label"].get<std::string>(),
                            format_double(est["estimate"].get<double>()),
                            format_double(est["scaled"][0].get<double>()),
                            format_double(est["scaled"][1].get<double>()),
                            format_double(result.delta_hat), "", "", ""});
    }
    table.rows.push_back({"calibrated", "weighted", format_double(result.theta_w),
                          format_double(result.lower), format_double(result.upper),
                          format_double(result.delta_hat), format_double(result.sigma_bet),
                          std::to_string(result.df), fmt_bool(result.degenerate)});
    if (robust)
      table.rows.push_back({"robust", bundle.labels[static_cast<std::size_t>(*trusted - 1)],
                            format_double(robust->theta_w), format_double(robust->lower),
                            format_double(robust->upper), format_double(robust->delta_hat),
                            format_double(robust->sigma_bet), std::to_string(robust->df),
                            fmt_bool(robust->degenerate)});
    write_text_file(opts.out_path, table_to_csv(meta, table));
  } else {
    throw Error(ErrorKind::Config, "unknown format: " + opts.format);
  }

  if (result.degenerate)
    std::cerr << "{\"warning\":{\"type\":\"degenerate\",\"message\":\"all estimates "
                 "identical; calibrated interval has zero width\"}}\n";
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config path")->required();
  cmd->add_option("--out", opts.out_path, "output file path")->required();
  cmd->add_option("--format", opts.format, "output format: csv|json");
  cmd->add_option("--seed", opts.seed, "seed override");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"calibrated inference under random distributional perturbations"};
  app.require_subcommand(1);

  CalibrateOptions calibrate_opts;
  calibrate_opts.format = "json";
  auto* calibrate = app.add_subcommand(
      "calibrate", "calibrated confidence intervals for a CSV dataset");
  calibrate->add_option("--data", calibrate_opts.data_path, "input CSV")->required();
  add_common(calibrate, calibrate_opts);

  CommonOptions delta_opts, coverage_opts, stability_opts, probe_opts;
  add_common(app.add_subcommand("simulate-delta",
                                "scale-estimate accuracy on the simulated causal model"),
             delta_opts);
  add_common(app.add_subcommand("simulate-coverage",
                                "interval coverage on the simulated causal model"),
             coverage_opts);
  add_common(app.add_subcommand("stability", "ranking stability on the student data"),
             stability_opts);
  add_common(app.add_subcommand("probe-perturbation",
                                "variance law probe for a perturbation model"),
             probe_opts);

  try {
    app.parse(argc, argv);
    if (app.got_subcommand("calibrate")) return cmd_calibrate(calibrate_opts);
    if (app.got_subcommand("simulate-delta")) return cmd_simulate_delta(delta_opts);
    if (app.got_subcommand("simulate-coverage")) return cmd_simulate_coverage(coverage_opts);
    if (app.got_subcommand("stability")) return cmd_stability(stability_opts);
    if (app.got_subcommand("probe-perturbation")) return cmd_probe(probe_opts);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "{\"error\":{\"type\":\"usage\",\"message\":"
              << nlohmann::json(e.what()).dump() << "}}\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "{\"error\":{\"type\":\"" << e.kind_name()
              << "\",\"message\":" << nlohmann::json(e.what()).dump() << "}}\n";
    return e.is_validation() ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":{\"type\":\"internal\",\"message\":"
              << nlohmann::json(e.what()).dump() << "}}\n";
    return 3;
  }
}

}  // namespace distcal
