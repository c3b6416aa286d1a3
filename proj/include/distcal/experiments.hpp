#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distcal/estimation.hpp"
#include "distcal/perturbation.hpp"
#include "distcal/random.hpp"

#include <json.hpp>

namespace distcal {

// Simulation studies on a linear structural causal model with five
// covariates, plus the observational stability study on the student
// performance data.

inline constexpr int kScmLatentDims = 6;
inline constexpr double kScmDirectEffect = 1.0;  // coefficient of X1 in the Y equation

// Maps six latent uniforms to one row (X1..X5, Y) through the structural
// equations; latent order is (noise_y, noise_x1, noise_x2, X3, X4, X5).
void scm_map(std::span<const double> u, std::span<double> row);

struct ScmDraw {
  Dataset data;    // columns X1..X5, response Y
  Matrix latents;  // n x 6 latent uniforms
};

ScmDraw generate_scm(long long n, RandomStream& stream);

enum class ScmPerturbation { None, BinnedGamma, Resample };

const char* scm_perturbation_name(ScmPerturbation model);
ScmPerturbation scm_perturbation_from_name(const std::string& name);

// Draws n rows from the perturbed structural model. BinnedGamma realizes the
// latent-cube perturbation (m cells per axis, Bernoulli(m^-5) cell selection,
// Gamma(1,1) weights); Resample draws from the empirical law of m base rows.
Dataset sample_scm(ScmPerturbation model, long long n, long long m, RandomStream& stream);

// Ground-truth delta for the perturbed structural model at sample size n.
double scm_true_delta(ScmPerturbation model, long long n, long long m);

// The eight regression adjustment sets; `misspecified` swaps
// {X1,X2,X3,X4} for {X1,X3,X4}, dropping the confounder from one set.
std::vector<AdjustmentSet> scm_adjustment_sets(const Dataset& data, bool misspecified);

struct ScmConfig {
  long long n = 1000;
  long long m = 1000;
  ScmPerturbation pert_model = ScmPerturbation::BinnedGamma;
  bool misspecified = false;
  int replicates = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

// Grid sweep mirroring the simulation layout (all n x m combinations).
struct ScmGridConfig {
  std::vector<long long> ns{200, 500, 1000};
  std::vector<long long> ms{200, 500, 1000};
  ScmPerturbation pert_model = ScmPerturbation::BinnedGamma;
  bool misspecified = false;
  int replicates = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static ScmGridConfig from_json(const nlohmann::json& j);
};

struct DeltaRow {
  long long n = 0;
  long long m = 0;
  std::string model;
  bool misspecified = false;
  double mean_delta = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double true_delta = 0.0;
  long long failures = 0;
};

DeltaRow run_delta_cell(const ScmConfig& config, std::uint64_t cell_index = 0);
std::vector<DeltaRow> run_delta_experiment(const ScmGridConfig& config);

struct CoverageRow {
  long long n = 0;
  long long m = 0;
  std::string model;
  bool misspecified = false;
  std::vector<std::string> labels;     // K estimator labels
  std::vector<double> naive_coverage;  // per estimator
  std::vector<double> scaled_coverage; // per estimator, delta-hat stretched
  double weighted_coverage = 0.0;      // t-interval around the weighted estimate
  long long failures = 0;
};

CoverageRow run_coverage_cell(const ScmConfig& config, std::uint64_t cell_index = 0);
std::vector<CoverageRow> run_coverage_experiment(const ScmGridConfig& config);

// ---- Student performance study ----

// Encoded covariates adopted from the student questionnaire data; the first
// seven are the binary covariates whose ranking stability is studied.
const std::vector<std::string>& student_selected_covariates();
const std::vector<std::string>& student_adopted_covariates();

// Reads the semicolon-separated questionnaire export, encodes the adopted
// covariates ({0,1} for binary answers, parents' education thresholded at
// secondary) and returns final Portuguese grade G3 as response.
Dataset load_student_data(const std::string& path);

struct StabilityConfig {
  std::string data_path;
  int n_covariate_sets = 10;  // K
  int replicates = 500;       // N
  std::vector<std::string> selected_covariates;  // defaults to the 7 studied
  double alpha = 0.05;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static StabilityConfig from_json(const nlohmann::json& j);
};

struct StabilityRow {
  std::string method;  // "method1" | "method2"
  int k_sets = 0;
  std::vector<double> similarity;  // mean top-l overlap, l = 1..7
};

struct CiLengthRow {
  std::string covariate;
  int k_sets = 0;
  std::string method;  // "calibrated" | "naive"
  double mean_length = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

struct StabilityResult {
  std::vector<StabilityRow> similarity;
  std::vector<CiLengthRow> lengths;
  long long regenerated_sets = 0;
};

StabilityResult run_stability_experiment(const StabilityConfig& config);
StabilityResult run_stability_experiment(const StabilityConfig& config, const Dataset& data);

}  // namespace distcal
