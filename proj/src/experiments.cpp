#include "distcal/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "distcal/calibration.hpp"
#include "distcal/csv.hpp"
#include "distcal/errors.hpp"
#include "distcal/parallel.hpp"
#include "distcal/special.hpp"

namespace distcal {

namespace {

std::vector<std::string> scm_column_names() { return {"X1", "X2", "X3", "X4", "X5"}; }

double quantile_of_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * (static_cast<double>(sorted.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

void scm_map(std::span<const double> u, std::span<double> row) {
  // u = (noise_y, noise_x1, noise_x2, X3, X4, X5)
  std::array<double, kScmLatentDims> z{};
  for (int j = 0; j < kScmLatentDims; ++j) z[static_cast<std::size_t>(j)] = gaussian_quantile(u[static_cast<std::size_t>(j)]);
  const double x3 = z[3];
  const double x4 = z[4];
  const double x5 = z[5];
  const double x2 = x3 + z[2];
  const double x1 = 0.5 * x2 + x4 + z[1];
  const double y = x1 + 0.5 * x2 + x3 + x5 + z[0];
  row[0] = x1;
  row[1] = x2;
  row[2] = x3;
  row[3] = x4;
  row[4] = x5;
  row[5] = y;
}

ScmDraw generate_scm(long long n, RandomStream& stream) {
  if (n < 1) throw_domain("generate_scm: n must be at least 1");
  ScmDraw draw;
  draw.latents = Matrix(static_cast<int>(n), kScmLatentDims);
  draw.data.column_names = scm_column_names();
  draw.data.response_name = "Y";
  draw.data.values = Matrix(static_cast<int>(n), 5);
  draw.data.response.resize(static_cast<std::size_t>(n));

  std::array<double, kScmLatentDims> u{};
  std::array<double, kScmLatentDims> row{};
  for (long long i = 0; i < n; ++i) {
    for (int j = 0; j < kScmLatentDims; ++j) {
      u[static_cast<std::size_t>(j)] = stream.uniform();
      draw.latents.at(static_cast<int>(i), j) = u[static_cast<std::size_t>(j)];
    }
    scm_map(u, row);
    for (int j = 0; j < 5; ++j) draw.data.values.at(static_cast<int>(i), j) = row[static_cast<std::size_t>(j)];
    draw.data.response[static_cast<std::size_t>(i)] = row[5];
  }
  return draw;
}

const char* scm_perturbation_name(ScmPerturbation model) {
  switch (model) {
    case ScmPerturbation::None: return "none";
    case ScmPerturbation::BinnedGamma: return "binned_gamma";
    case ScmPerturbation::Resample: return "resample";
  }
  return "unknown";
}

ScmPerturbation scm_perturbation_from_name(const std::string& name) {
  if (name == "none") return ScmPerturbation::None;
  if (name == "binned_gamma") return ScmPerturbation::BinnedGamma;
  if (name == "resample") return ScmPerturbation::Resample;
  throw Error(ErrorKind::Config, "unknown SCM perturbation model: " + name);
}

Dataset sample_scm(ScmPerturbation model, long long n, long long m, RandomStream& stream) {
  if (n < 1) throw_domain("sample_scm: n must be at least 1");
  switch (model) {
    case ScmPerturbation::None:
      return generate_scm(n, stream).data;
    case ScmPerturbation::Resample: {
      if (m < 1) throw_domain("sample_scm: m must be at least 1");
      const Dataset pool = generate_scm(m, stream).data;
      Dataset out = pool;
      out.values = Matrix(static_cast<int>(n), 5);
      out.response.resize(static_cast<std::size_t>(n));
      for (long long i = 0; i < n; ++i) {
        const auto pick = static_cast<int>(stream.uniform_below(static_cast<std::uint64_t>(m)));
        for (int j = 0; j < 5; ++j) out.values.at(static_cast<int>(i), j) = pool.values.at(pick, j);
        out.response[static_cast<std::size_t>(i)] = pool.response[static_cast<std::size_t>(pick)];
      }
      return out;
    }
    case ScmPerturbation::BinnedGamma: {
      if (m < 2) throw_domain("sample_scm: m must be at least 2");
      LatentCube cube;
      cube.axes = kScmLatentDims;
      cube.per_axis = m;
      cube.selection_prob = std::pow(static_cast<double>(m), -(kScmLatentDims - 1));
      cube.weight_law.kind = WeightLaw::Kind::Gamma;
      cube.weight_law.shape = 1.0;
      cube.weight_law.scale = 1.0;
      const CubeRealization real = realize_cube(cube, stream);

      Dataset out;
      out.column_names = scm_column_names();
      out.response_name = "Y";
      out.values = Matrix(static_cast<int>(n), 5);
      out.response.resize(static_cast<std::size_t>(n));
      std::array<double, kScmLatentDims> u{};
      std::array<double, kScmLatentDims> row{};
      for (long long i = 0; i < n; ++i) {
        draw_latent_point(cube, real, stream, u);
        scm_map(u, row);
        for (int j = 0; j < 5; ++j) out.values.at(static_cast<int>(i), j) = row[static_cast<std::size_t>(j)];
        out.response[static_cast<std::size_t>(i)] = row[5];
      }
      return out;
    }
  }
  throw_domain("sample_scm: unsupported model");
}

double scm_true_delta(ScmPerturbation model, long long n, long long m) {
  switch (model) {
    case ScmPerturbation::None:
      return 1.0;
    case ScmPerturbation::Resample: {
      PerturbationSpec spec;
      spec.model = PertModel::Resample;
      spec.m = m;
      return true_delta(spec, n);
    }
    case ScmPerturbation::BinnedGamma: {
      PerturbationSpec spec;
      spec.model = PertModel::BinnedWeights;
      spec.m = m;
      spec.weight_law.kind = WeightLaw::Kind::Gamma;
      spec.weight_law.shape = 1.0;
      spec.weight_law.scale = 1.0;
      spec.selection_prob = std::pow(static_cast<double>(m), -(kScmLatentDims - 1));
      return true_delta(spec, n);
    }
  }
  throw_domain("scm_true_delta: unsupported model");
}

std::vector<AdjustmentSet> scm_adjustment_sets(const Dataset& data, bool misspecified) {
  const std::vector<std::vector<std::string>> sets = {
      {"X1", "X2"},
      {"X1", "X2", "X3"},
      {"X1", "X2", "X4"},
      {"X1", "X2", "X5"},
      misspecified ? std::vector<std::string>{"X1", "X3", "X4"}
                   : std::vector<std::string>{"X1", "X2", "X3", "X4"},
      {"X1", "X2", "X3", "X5"},
      {"X1", "X2", "X4", "X5"},
      {"X1", "X2", "X3", "X4", "X5"},
  };
  std::vector<AdjustmentSet> out;
  out.reserve(sets.size());
  for (const auto& names : sets) out.push_back(AdjustmentSet::from_names(data, names, "X1"));
  return out;
}

void ScmConfig::validate() const {
  if (replicates < 1) throw_domain("ScmConfig: replicates must be at least 1");
  if (n < 10 || m < 10) throw_domain("ScmConfig: n and m must be at least 10");
  if (!(alpha > 0.0 && alpha < 1.0)) throw_domain("ScmConfig: alpha must lie in (0,1)");
}

nlohmann::json ScmGridConfig::to_json() const {
  return nlohmann::json{{"n", ns},
                        {"m", ms},
                        {"model", scm_perturbation_name(pert_model)},
                        {"misspecified", misspecified},
                        {"replicates", replicates},
                        {"alpha", alpha},
                        {"seed", seed}};
}

ScmGridConfig ScmGridConfig::from_json(const nlohmann::json& j) {
  ScmGridConfig config;
  try {
    auto read_axis = [&](const char* key, std::vector<long long>& out) {
      if (!j.contains(key)) return;
      if (j.at(key).is_array()) {
        out = j.at(key).get<std::vector<long long>>();
      } else {
        out = {j.at(key).get<long long>()};
      }
    };
    read_axis("n", config.ns);
    read_axis("m", config.ms);
    if (j.contains("model"))
      config.pert_model = scm_perturbation_from_name(j.at("model").get<std::string>());
    if (j.contains("misspecified")) config.misspecified = j.at("misspecified").get<bool>();
    if (j.contains("replicates")) config.replicates = j.at("replicates").get<int>();
    if (j.contains("alpha")) config.alpha = j.at("alpha").get<double>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("invalid experiment config: ") + e.what());
  }
  if (config.ns.empty() || config.ms.empty())
    throw Error(ErrorKind::Config, "experiment config needs nonempty n and m");
  return config;
}

namespace {

struct ReplicateSummary {
  bool ok = false;
  double delta_hat = 1.0;
  std::vector<unsigned char> naive_cover;   // per estimator
  std::vector<unsigned char> scaled_cover;  // per estimator
  unsigned char weighted_cover = 0;
};

ReplicateSummary run_scm_replicate(const ScmConfig& config, std::uint64_t cell_index,
                                   long long replicate) {
  RandomStream stream(config.seed, (cell_index << 32) + static_cast<std::uint64_t>(replicate));
  ReplicateSummary out;
  try {
    const Dataset data = sample_scm(config.pert_model, config.n, config.m, stream);
    const std::vector<AdjustmentSet> sets = scm_adjustment_sets(data, config.misspecified);
    const EstimatorBundle bundle = build_bundle(data, sets);
    const CalibrationResult result = calibrated_ci(bundle, config.alpha, true, 0.0);

    out.delta_hat = result.delta_hat;
    out.naive_cover.resize(sets.size());
    out.scaled_cover.resize(sets.size());
    for (int k = 0; k < bundle.K(); ++k) {
      out.naive_cover[static_cast<std::size_t>(k)] =
          naive_ci(bundle.estimates[static_cast<std::size_t>(k)],
                   bundle.variances[static_cast<std::size_t>(k)], bundle.n, config.alpha)
              .contains(kScmDirectEffect);
      out.scaled_cover[static_cast<std::size_t>(k)] =
          calibrated_estimator_ci(bundle, k, result.delta_hat, result.df, config.alpha)
              .contains(kScmDirectEffect);
    }
    out.weighted_cover = result.interval().contains(kScmDirectEffect);
    out.ok = true;
  } catch (const Error& e) {
    if (e.is_validation()) throw;  // configuration mistakes are not replicate noise
    out.ok = false;
  }
  return out;
}

}  // namespace

DeltaRow run_delta_cell(const ScmConfig& config, std::uint64_t cell_index) {
  config.validate();
  std::vector<ReplicateSummary> slots(static_cast<std::size_t>(config.replicates));
  parallel_for(config.replicates, [&](long long r) {
    slots[static_cast<std::size_t>(r)] = run_scm_replicate(config, cell_index, r);
  });

  DeltaRow row;
  row.n = config.n;
  row.m = config.m;
  row.model = scm_perturbation_name(config.pert_model);
  row.misspecified = config.misspecified;
  row.true_delta = scm_true_delta(config.pert_model, config.n, config.m);

  std::vector<double> deltas;
  deltas.reserve(slots.size());
  for (const auto& s : slots) {
    if (s.ok) {
      deltas.push_back(s.delta_hat);
    } else {
      ++row.failures;
    }
  }
  if (deltas.empty())
    throw Error(ErrorKind::Singularity, "run_delta_cell: every replicate failed");
  double mean = 0.0;
  for (double d : deltas) mean += d;
  row.mean_delta = mean / static_cast<double>(deltas.size());
  std::sort(deltas.begin(), deltas.end());
  row.q025 = quantile_of_sorted(deltas, 0.025);
  row.q975 = quantile_of_sorted(deltas, 0.975);
  return row;
}

std::vector<DeltaRow> run_delta_experiment(const ScmGridConfig& config) {
  std::vector<DeltaRow> rows;
  std::uint64_t cell = 0;
  for (long long n : config.ns) {
    for (long long m : config.ms) {
      ScmConfig cell_config;
      cell_config.n = n;
      cell_config.m = m;
      cell_config.pert_model = config.pert_model;
      cell_config.misspecified = config.misspecified;
      cell_config.replicates = config.replicates;
      cell_config.alpha = config.alpha;
      cell_config.seed = config.seed;
      rows.push_back(run_delta_cell(cell_config, cell++));
    }
  }
  return rows;
}

CoverageRow run_coverage_cell(const ScmConfig& config, std::uint64_t cell_index) {
  config.validate();
  std::vector<ReplicateSummary> slots(static_cast<std::size_t>(config.replicates));
  parallel_for(config.replicates, [&](long long r) {
    slots[static_cast<std::size_t>(r)] = run_scm_replicate(config, cell_index, r);
  });

  CoverageRow row;
  row.n = config.n;
  row.m = config.m;
  row.model = scm_perturbation_name(config.pert_model);
  row.misspecified = config.misspecified;
  {
    RandomStream proto_stream(config.seed, ~std::uint64_t{0});
    const Dataset proto = generate_scm(10, proto_stream).data;
    for (const auto& set : scm_adjustment_sets(proto, config.misspecified))
      row.labels.push_back(set.label);
  }

  const std::size_t K = row.labels.size();
  row.naive_coverage.assign(K, 0.0);
  row.scaled_coverage.assign(K, 0.0);
  long long ok_count = 0;
  double weighted = 0.0;
  for (const auto& s : slots) {
    if (!s.ok) {
      ++row.failures;
      continue;
    }
    ++ok_count;
    weighted += s.weighted_cover;
    for (std::size_t k = 0; k < K; ++k) {
      row.naive_coverage[k] += s.naive_cover[k];
      row.scaled_coverage[k] += s.scaled_cover[k];
    }
  }
  if (ok_count == 0)
    throw Error(ErrorKind::Singularity, "run_coverage_cell: every replicate failed");
  for (std::size_t k = 0; k < K; ++k) {
    row.naive_coverage[k] /= static_cast<double>(ok_count);
    row.scaled_coverage[k] /= static_cast<double>(ok_count);
  }
  row.weighted_coverage = weighted / static_cast<double>(ok_count);
  return row;
}

std::vector<CoverageRow> run_coverage_experiment(const ScmGridConfig& config) {
  std::vector<CoverageRow> rows;
  std::uint64_t cell = 0;
  for (long long n : config.ns) {
    for (long long m : config.ms) {
      ScmConfig cell_config;
      cell_config.n = n;
      cell_config.m = m;
      cell_config.pert_model = config.pert_model;
      cell_config.misspecified = config.misspecified;
      cell_config.replicates = config.replicates;
      cell_config.alpha = config.alpha;
      cell_config.seed = config.seed;
      rows.push_back(run_coverage_cell(cell_config, cell++));
    }
  }
  return rows;
}

// ---- Student performance study ----

namespace {

enum class ColumnKind { Numeric, YesNo, Letter, EducationThreshold };

struct ColumnRule {
  std::string encoded_name;
  std::string raw_name;
  ColumnKind kind;
  char one_value = '\0';  // Letter kind: raw value mapping to 1
};

const std::vector<ColumnRule>& student_column_rules() {
  static const std::vector<ColumnRule> rules = {
      // The seven studied binary covariates.
      {"Pstatus", "Pstatus", ColumnKind::Letter, 'T'},
      {"schoolsup", "schoolsup", ColumnKind::YesNo},
      {"famsup", "famsup", ColumnKind::YesNo},
      {"romantic", "romantic", ColumnKind::YesNo},
      {"paid", "paid", ColumnKind::YesNo},
      {"Medu_high", "Medu", ColumnKind::EducationThreshold},
      {"Fedu_high", "Fedu", ColumnKind::EducationThreshold},
      // Remaining adopted covariates.
      {"school", "school", ColumnKind::Letter, 'M'},   // MS = 1, GP = 0
      {"sex", "sex", ColumnKind::Letter, 'M'},         // M = 1, F = 0
      {"age", "age", ColumnKind::Numeric},
      {"address", "address", ColumnKind::Letter, 'U'}, // urban = 1
      {"famsize", "famsize", ColumnKind::Letter, 'G'}, // GT3 = 1, LE3 = 0
      {"traveltime", "traveltime", ColumnKind::Numeric},
      {"studytime", "studytime", ColumnKind::Numeric},
      {"failures", "failures", ColumnKind::Numeric},
      {"activities", "activities", ColumnKind::YesNo},
      {"nursery", "nursery", ColumnKind::YesNo},
      {"higher", "higher", ColumnKind::YesNo},
      {"internet", "internet", ColumnKind::YesNo},
      {"famrel", "famrel", ColumnKind::Numeric},
  };
  return rules;
}

double parse_numeric(const std::string& field, const std::string& column) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end == field.c_str() || *end != '\0')
    throw Error(ErrorKind::Ingestion,
                "student data: non-numeric value '" + field + "' in column " + column);
  return v;
}

}  // namespace

const std::vector<std::string>& student_selected_covariates() {
  static const std::vector<std::string> names = {
      "Pstatus", "schoolsup", "famsup", "romantic", "paid", "Medu_high", "Fedu_high"};
  return names;
}

const std::vector<std::string>& student_adopted_covariates() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& rule : student_column_rules()) out.push_back(rule.encoded_name);
    return out;
  }();
  return names;
}

Dataset load_student_data(const std::string& path) {
  const CsvTable table = read_csv(path, ';');

  std::map<std::string, int> column_pos;
  for (std::size_t j = 0; j < table.header.size(); ++j)
    column_pos[table.header[j]] = static_cast<int>(j);

  std::vector<std::string> missing;
  for (const auto& rule : student_column_rules())
    if (!column_pos.count(rule.raw_name)) missing.push_back(rule.raw_name);
  if (!column_pos.count("G3")) missing.push_back("G3");
  if (!missing.empty()) {
    std::ostringstream os;
    os << "student data schema mismatch, missing columns:";
    for (const auto& name : missing) os << ' ' << name;
    throw Error(ErrorKind::Ingestion, os.str());
  }

  const auto& rules = student_column_rules();
  Dataset data;
  data.response_name = "G3";
  for (const auto& rule : rules) data.column_names.push_back(rule.encoded_name);
  const int n = static_cast<int>(table.rows.size());
  data.values = Matrix(n, static_cast<int>(rules.size()));
  data.response.resize(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    const auto& fields = table.rows[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < rules.size(); ++c) {
      const auto& rule = rules[c];
      const std::string& field = fields[static_cast<std::size_t>(column_pos[rule.raw_name])];
      double value = 0.0;
      switch (rule.kind) {
        case ColumnKind::Numeric:
          value = parse_numeric(field, rule.raw_name);
          break;
        case ColumnKind::YesNo:
          if (field == "yes") value = 1.0;
          else if (field == "no") value = 0.0;
          else
            throw Error(ErrorKind::Ingestion, "student data: expected yes/no in column " +
                                                  rule.raw_name + ", got '" + field + "'");
          break;
        case ColumnKind::Letter:
          if (field.empty())
            throw Error(ErrorKind::Ingestion, "student data: empty value in column " + rule.raw_name);
          value = field[0] == rule.one_value ? 1.0 : 0.0;
          break;
        case ColumnKind::EducationThreshold:
          // 0-4 ordinal scale; secondary or higher education means >= 3.
          value = parse_numeric(field, rule.raw_name) >= 3.0 ? 1.0 : 0.0;
          break;
      }
      data.values.at(i, static_cast<int>(c)) = value;
    }
    data.response[static_cast<std::size_t>(i)] =
        parse_numeric(fields[static_cast<std::size_t>(column_pos["G3"])], "G3");
  }
  data.validate();
  return data;
}

nlohmann::json StabilityConfig::to_json() const {
  return nlohmann::json{{"data_path", data_path},
                        {"n_covariate_sets", n_covariate_sets},
                        {"replicates", replicates},
                        {"selected_covariates", selected_covariates.empty()
                                                    ? student_selected_covariates()
                                                    : selected_covariates},
                        {"alpha", alpha},
                        {"seed", seed}};
}

StabilityConfig StabilityConfig::from_json(const nlohmann::json& j) {
  StabilityConfig config;
  try {
    if (j.contains("data_path")) config.data_path = j.at("data_path").get<std::string>();
    if (j.contains("n_covariate_sets")) config.n_covariate_sets = j.at("n_covariate_sets").get<int>();
    if (j.contains("replicates")) config.replicates = j.at("replicates").get<int>();
    if (j.contains("selected_covariates"))
      config.selected_covariates = j.at("selected_covariates").get<std::vector<std::string>>();
    if (j.contains("alpha")) config.alpha = j.at("alpha").get<double>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("invalid stability config: ") + e.what());
  }
  return config;
}

namespace {

struct StabilityReplicate {
  // similarity[method][l-1], method 0/1
  std::array<std::array<double, 7>, 2> similarity{};
  // CI lengths on split 1: [covariate] calibrated / naive
  std::vector<double> calibrated_length;
  std::vector<double> naive_length;
  long long regenerations = 0;
};

Dataset subset_rows(const Dataset& data, const std::vector<int>& rows) {
  Dataset out;
  out.column_names = data.column_names;
  out.response_name = data.response_name;
  out.values = Matrix(static_cast<int>(rows.size()), data.n_columns());
  out.response.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < data.n_columns(); ++j)
      out.values.at(static_cast<int>(i), j) = data.values.at(rows[i], j);
    out.response[i] = data.response[static_cast<std::size_t>(rows[i])];
  }
  return out;
}

struct CovariateSet {
  std::vector<int> indices;            // dataset column indices
  std::vector<int> selected_positions; // positions of the studied covariates
};

// Effect sizes (|coefficient| / standard error) of the studied covariates.
struct SplitFits {
  // per set, per studied covariate
  std::vector<std::vector<double>> estimates;
  std::vector<std::vector<double>> variances;  // influence variances
  std::vector<Matrix> influences;              // per set: n x L influence columns
};

SplitFits fit_all_sets(const Dataset& split, const std::vector<CovariateSet>& sets) {
  SplitFits fits;
  fits.estimates.resize(sets.size());
  fits.variances.resize(sets.size());
  fits.influences.resize(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const auto ols = ols_fit_multi(split, sets[s].indices, sets[s].selected_positions,
                                   "random_set_" + std::to_string(s + 1));
    const int n = split.n();
    const int L = static_cast<int>(ols.size());
    fits.influences[s] = Matrix(n, L);
    for (int l = 0; l < L; ++l) {
      fits.estimates[s].push_back(ols[static_cast<std::size_t>(l)].theta_hat);
      double mean = 0.0;
      for (int i = 0; i < n; ++i) mean += ols[static_cast<std::size_t>(l)].influence[static_cast<std::size_t>(i)];
      mean /= n;
      double var = 0.0;
      for (int i = 0; i < n; ++i) {
        const double phi = ols[static_cast<std::size_t>(l)].influence[static_cast<std::size_t>(i)];
        fits.influences[s].at(i, l) = phi;
        var += (phi - mean) * (phi - mean);
      }
      fits.variances[s].push_back(var / n);
      if (!(fits.variances[s].back() > 0.0))
        throw Error(ErrorKind::Collinearity, "degenerate influence in random covariate set");
    }
  }
  return fits;
}

std::vector<int> rank_descending(const std::vector<double>& score) {
  std::vector<int> order(score.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)]; });
  return order;
}

double top_l_overlap(const std::vector<int>& rank1, const std::vector<int>& rank2, int l) {
  std::set<int> top1(rank1.begin(), rank1.begin() + l);
  int overlap = 0;
  for (int i = 0; i < l; ++i) overlap += top1.count(rank2[static_cast<std::size_t>(i)]);
  return static_cast<double>(overlap) / static_cast<double>(l);
}

}  // namespace

StabilityResult run_stability_experiment(const StabilityConfig& config) {
  return run_stability_experiment(config, load_student_data(config.data_path));
}

StabilityResult run_stability_experiment(const StabilityConfig& config, const Dataset& data) {
  data.validate();
  if (config.n_covariate_sets < 2)
    throw_domain("stability: need at least 2 covariate sets");
  if (config.replicates < 1) throw_domain("stability: replicates must be at least 1");
  if (!(config.alpha > 0.0 && config.alpha < 1.0))
    throw_domain("stability: alpha must lie in (0,1)");

  const std::vector<std::string> selected = config.selected_covariates.empty()
                                                ? student_selected_covariates()
                                                : config.selected_covariates;
  const int L = static_cast<int>(selected.size());
  std::vector<int> selected_idx;
  for (const auto& name : selected) selected_idx.push_back(data.column_index(name));
  std::vector<int> other_idx;
  for (int j = 0; j < data.n_columns(); ++j)
    if (std::find(selected_idx.begin(), selected_idx.end(), j) == selected_idx.end())
      other_idx.push_back(j);
  if (other_idx.empty())
    throw_domain("stability: no non-selected covariates available for random sets");

  const int K = config.n_covariate_sets;
  const int n = data.n();
  const int half = (n + 1) / 2;

  std::vector<StabilityReplicate> slots(static_cast<std::size_t>(config.replicates));
  parallel_for(config.replicates, [&](long long rep) {
    RandomStream stream(config.seed, static_cast<std::uint64_t>(rep));
    StabilityReplicate& out = slots[static_cast<std::size_t>(rep)];

    // Exact half split of a uniformly shuffled row order.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      const auto j = static_cast<int>(stream.uniform_below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    const Dataset split1 = subset_rows(data, {order.begin(), order.begin() + half});
    const Dataset split2 = subset_rows(data, {order.begin() + half, order.end()});

    // K distinct covariate sets, each the studied covariates plus at least
    // one random extra; collinear sets are regenerated (bounded retries).
    std::vector<CovariateSet> sets;
    std::set<std::vector<int>> seen;
    constexpr int kMaxAttempts = 200;
    auto draw_set = [&]() {
      for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::vector<int> extras;
        for (int idx : other_idx)
          if (stream.bernoulli(0.5)) extras.push_back(idx);
        if (extras.empty()) {
          ++out.regenerations;
          continue;
        }
        CovariateSet set;
        set.indices = selected_idx;
        set.indices.insert(set.indices.end(), extras.begin(), extras.end());
        for (int l = 0; l < L; ++l) set.selected_positions.push_back(l);
        if (!seen.insert(set.indices).second) {
          ++out.regenerations;
          continue;
        }
        return set;
      }
      throw Error(ErrorKind::Config,
                  "stability: could not draw a fresh covariate set after bounded retries");
    };
    for (int s = 0; s < K; ++s) sets.push_back(draw_set());

    // Method 1 picks one set per split before any fitting.
    const auto pick1 = static_cast<std::size_t>(stream.uniform_below(static_cast<std::uint64_t>(K)));
    const auto pick2 = static_cast<std::size_t>(stream.uniform_below(static_cast<std::uint64_t>(K)));

    SplitFits fits1, fits2;
    for (int attempt = 0;; ++attempt) {
      try {
        fits1 = fit_all_sets(split1, sets);
        fits2 = fit_all_sets(split2, sets);
        break;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Collinearity || attempt >= kMaxAttempts) throw;
        // Collinearity on a split: redraw the whole collection, keeping the
        // count of regenerations.
        ++out.regenerations;
        seen.clear();
        sets.clear();
        for (int s = 0; s < K; ++s) sets.push_back(draw_set());
      }
    }

    std::array<std::array<std::vector<int>, 2>, 2> rankings;  // [method][split]
    out.calibrated_length.assign(static_cast<std::size_t>(L), 0.0);
    out.naive_length.assign(static_cast<std::size_t>(L), 0.0);

    for (int split = 0; split < 2; ++split) {
      const SplitFits& fits = split == 0 ? fits1 : fits2;
      const int ns = split == 0 ? split1.n() : split2.n();
      const std::size_t pick = split == 0 ? pick1 : pick2;

      // Method 1: single randomly chosen specification.
      std::vector<double> effect1(static_cast<std::size_t>(L));
      for (int l = 0; l < L; ++l) {
        const double se = std::sqrt(fits.variances[pick][static_cast<std::size_t>(l)] / ns);
        effect1[static_cast<std::size_t>(l)] = std::fabs(fits.estimates[pick][static_cast<std::size_t>(l)]) / se;
        if (split == 0)
          out.naive_length[static_cast<std::size_t>(l)] =
              naive_ci(fits.estimates[pick][static_cast<std::size_t>(l)],
                       fits.variances[pick][static_cast<std::size_t>(l)], ns, config.alpha)
                  .width();
      }
      rankings[0][static_cast<std::size_t>(split)] = rank_descending(effect1);

      // Method 2: calibrated aggregation across all K specifications.
      std::vector<double> effect2(static_cast<std::size_t>(L));
      for (int l = 0; l < L; ++l) {
        EstimatorBundle bundle;
        bundle.n = ns;
        bundle.influence = Matrix(ns, K);
        for (int s = 0; s < K; ++s) {
          bundle.estimates.push_back(fits.estimates[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)]);
          bundle.variances.push_back(fits.variances[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)]);
          bundle.labels.push_back("set_" + std::to_string(s + 1));
          for (int i = 0; i < ns; ++i)
            bundle.influence.at(i, s) = fits.influences[static_cast<std::size_t>(s)].at(i, l);
        }
        const CalibrationResult result = calibrated_ci(bundle, config.alpha, true, 0.0);
        const double se = result.sigma_bet / std::sqrt(static_cast<double>(result.df));
        effect2[static_cast<std::size_t>(l)] =
            se > 0.0 ? std::fabs(result.theta_w) / se
                     : std::numeric_limits<double>::infinity();
        if (split == 0)
          out.calibrated_length[static_cast<std::size_t>(l)] = result.interval().width();
      }
      rankings[1][static_cast<std::size_t>(split)] = rank_descending(effect2);
    }

    for (int method = 0; method < 2; ++method)
      for (int l = 1; l <= L; ++l)
        out.similarity[static_cast<std::size_t>(method)][static_cast<std::size_t>(l - 1)] =
            top_l_overlap(rankings[static_cast<std::size_t>(method)][0],
                          rankings[static_cast<std::size_t>(method)][1], l);
  });

  StabilityResult result;
  for (int method = 0; method < 2; ++method) {
    StabilityRow row;
    row.method = method == 0 ? "method1" : "method2";
    row.k_sets = K;
    row.similarity.assign(static_cast<std::size_t>(L), 0.0);
    for (const auto& slot : slots)
      for (int l = 0; l < L; ++l)
        row.similarity[static_cast<std::size_t>(l)] += slot.similarity[static_cast<std::size_t>(method)][static_cast<std::size_t>(l)];
    for (int l = 0; l < L; ++l)
      row.similarity[static_cast<std::size_t>(l)] /= static_cast<double>(config.replicates);
    result.similarity.push_back(std::move(row));
  }

  for (int l = 0; l < L; ++l) {
    for (int method = 0; method < 2; ++method) {
      std::vector<double> lengths;
      lengths.reserve(slots.size());
      for (const auto& slot : slots)
        lengths.push_back(method == 0 ? slot.calibrated_length[static_cast<std::size_t>(l)]
                                      : slot.naive_length[static_cast<std::size_t>(l)]);
      std::sort(lengths.begin(), lengths.end());
      CiLengthRow row;
      row.covariate = selected[static_cast<std::size_t>(l)];
      row.k_sets = K;
      row.method = method == 0 ? "calibrated" : "naive";
      double mean = 0.0;
      for (double v : lengths) mean += v;
      row.mean_length = mean / static_cast<double>(lengths.size());
      row.q025 = quantile_of_sorted(lengths, 0.025);
      row.q975 = quantile_of_sorted(lengths, 0.975);
      result.lengths.push_back(std::move(row));
    }
  }

  for (const auto& slot : slots) result.regenerated_sets += slot.regenerations;
  return result;
}

}  // namespace distcal
