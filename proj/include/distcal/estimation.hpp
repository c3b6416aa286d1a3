#pragma once

#include <string>
#include <vector>

#include "distcal/linalg.hpp"

namespace distcal {

// Regression-adjusted M-estimation: OLS coefficients for a designated target
// covariate across multiple adjustment sets, with plug-in influence values
// and variances.

struct Dataset {
  std::vector<std::string> column_names;  // covariate names, unique
  Matrix values;                          // n x p covariates
  std::vector<double> response;           // length n
  std::string response_name = "y";

  int n() const { return values.rows; }
  int n_columns() const { return values.cols; }

  // Throws an ingestion error naming the column when absent.
  int column_index(const std::string& name) const;

  void validate() const;

  // Header row gives column names; the named response column is split out.
  // Values must parse as numbers ('.' decimal separator); categorical
  // columns must be pre-encoded.
  static Dataset from_csv(const std::string& path, const std::string& response_column,
                          char delimiter = ',');
};

struct AdjustmentSet {
  std::vector<int> indices;  // covariate columns, target included
  int target_position = 0;   // position of the target within `indices`
  std::string label;

  void validate(const Dataset& data) const;
  static AdjustmentSet from_names(const Dataset& data, const std::vector<std::string>& names,
                                  const std::string& target);
};

struct OlsFit {
  double theta_hat = 0.0;
  std::vector<double> influence;  // plug-in influence values, mean zero
};

// Least squares with an automatic intercept (never the target). Solved by
// column-pivoted Householder QR; a diagonal ratio below 1e-10 raises a
// collinearity error naming the set.
OlsFit ols_fit(const Dataset& data, const AdjustmentSet& set);

// One factorization, several target coefficients of the same regression.
// target_positions index into `indices`.
std::vector<OlsFit> ols_fit_multi(const Dataset& data, const std::vector<int>& indices,
                                  const std::vector<int>& target_positions,
                                  const std::string& label);

struct EstimatorBundle {
  std::vector<double> estimates;  // K
  Matrix influence;               // n x K
  std::vector<double> variances;  // K, plug-in Var of each influence column
  int n = 0;
  std::vector<std::string> labels;

  int K() const { return static_cast<int>(estimates.size()); }
  void validate() const;
};

EstimatorBundle build_bundle(const Dataset& data, const std::vector<AdjustmentSet>& sets);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double width() const { return upper - lower; }
  bool contains(double x) const { return lower <= x && x <= upper; }
};

// Classical CLT interval theta_hat +- z_{1-alpha/2} sqrt(variance/n).
Interval naive_ci(double theta_hat, double variance, long long n, double alpha);

}  // namespace distcal
