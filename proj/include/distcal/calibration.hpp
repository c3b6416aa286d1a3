#pragma once

#include <vector>

#include "distcal/estimation.hpp"
#include "distcal/linalg.hpp"

#include <json.hpp>

namespace distcal {

// Calibrated inference from a bundle of estimators: decorrelation, inverse
// variance weighting, the between-estimator spread, the perturbation-scale
// estimate and the resulting confidence intervals.

struct CalibrationResult {
  double theta_w = 0.0;
  double sigma_bet = 0.0;
  double delta_hat = 1.0;  // reported with the max(., 1) floor
  int df = 1;
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;
  std::vector<double> weights;
  bool decorrelated = false;
  bool degenerate = false;  // all estimates identical, zero-width interval

  Interval interval() const { return {lower, upper}; }
  nlohmann::json to_json() const;
};

// K x K matrix with entry (j,k) = (1/n) sum_i centered cross products of the
// influence columns; the diagonal equals the bundle variances.
SymMatrix influence_covariance(const EstimatorBundle& bundle);

// Remark-style decorrelation: rows of the inverse square root of the
// estimator covariance are normalized to sum one, so a common target is
// preserved; the transformed influence columns are uncorrelated up to
// estimation error in the covariance.
EstimatorBundle decorrelate(const EstimatorBundle& bundle, double ridge = 0.0);

std::vector<double> inverse_variance_weights(const std::vector<double>& variances);

// Correlation threshold above which calibrated_ci decorrelates by default.
inline constexpr double kAutoDecorrelateThreshold = 0.05;

// Correlation eigenvalues below this fraction of the largest are treated as
// exact estimator redundancies (influence columns spanning fewer than K
// directions) and dropped before calibrating; the degrees of freedom shrink
// accordingly. Redundant directions decay like 1/n in the estimated
// correlation, well below this cutoff at practical sample sizes.
inline constexpr double kRankTolerance = 1e-3;

CalibrationResult calibrated_ci(const EstimatorBundle& bundle, double alpha,
                                bool auto_decorrelate = true, double ridge = 0.0);

// Per-estimator interval stretched by the estimated perturbation scale.
Interval scaled_estimator_ci(const EstimatorBundle& bundle, int k, double delta_hat,
                             double alpha);

// Per-estimator calibrated interval with the t quantile matching delta_hat's
// degrees of freedom; accounts for the chi-square noise in the scale
// estimate, which the plain z-based stretch does not. Algebraically equal to
// t_{df} * sqrt(sum_j Var_k/Var_j) * sigma_bet / sqrt(df) around estimator k
// in the uncorrelated case.
Interval calibrated_estimator_ci(const EstimatorBundle& bundle, int k,
                                 double delta_hat, int df, double alpha);

// Interval centered at a trusted estimator, widened by the between-estimator
// spread of the remaining K-1; conservative when agreement fails. Requires
// K >= 3. `trusted` is a zero-based index.
CalibrationResult robust_ci(const EstimatorBundle& bundle, int trusted, double alpha);

// Scale estimate for the expository equal-known-variance setting: pooled
// mean, raw between-estimator sum of squares, no truncation.
double delta_hat_simple(const EstimatorBundle& bundle, double known_sigma2);

}  // namespace distcal
