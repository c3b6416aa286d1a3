#include "distcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "distcal/errors.hpp"
#include "distcal/special.hpp"

namespace distcal {

nlohmann::json CalibrationResult::to_json() const {
  return nlohmann::json{{"theta_w", theta_w}, {"sigma_bet", sigma_bet},
                        {"delta_hat", delta_hat}, {"df", df},
                        {"lower", lower},   {"upper", upper},
                        {"alpha", alpha},   {"weights", weights},
                        {"decorrelated", decorrelated}, {"degenerate", degenerate}};
}

SymMatrix influence_covariance(const EstimatorBundle& bundle) {
  bundle.validate();
  const int K = bundle.K();
  const int n = bundle.n;
  std::vector<double> means(static_cast<std::size_t>(K), 0.0);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < n; ++i) means[static_cast<std::size_t>(k)] += bundle.influence.at(i, k);
    means[static_cast<std::size_t>(k)] /= n;
  }
  SymMatrix cov(K);
  for (int j = 0; j < K; ++j) {
    for (int k = j; k < K; ++k) {
      double s = 0.0;
      for (int i = 0; i < n; ++i)
        s += (bundle.influence.at(i, j) - means[static_cast<std::size_t>(j)]) *
             (bundle.influence.at(i, k) - means[static_cast<std::size_t>(k)]);
      cov.at(j, k) = s / n;
      cov.at(k, j) = cov.at(j, k);
    }
  }
  return cov;
}

EstimatorBundle decorrelate(const EstimatorBundle& bundle, double ridge) {
  bundle.validate();
  const int K = bundle.K();
  const int n = bundle.n;

  // Covariance of the estimators themselves; the 1/n factor cancels in the
  // row normalization but keeps the matrix interpretable.
  SymMatrix sigma = influence_covariance(bundle);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) sigma.at(i, j) /= n;

  SymMatrix root(K);
  try {
    root = sym_inverse_sqrt(sigma, ridge);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Singularity) {
      throw Error(ErrorKind::Singularity,
                  std::string(e.what()) +
                      "; estimator covariance is singular, drop near-duplicate "
                      "estimators before calibrating");
    }
    throw;
  }

  Matrix t(K, K);
  for (int i = 0; i < K; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < K; ++j) row_sum += root.at(i, j);
    if (std::fabs(row_sum) <= 1e-10) {
      std::ostringstream os;
      os << "decorrelation transform undefined: row " << i
         << " of the inverse square root sums to " << row_sum;
      throw Error(ErrorKind::IllConditionedTransform, os.str());
    }
    for (int j = 0; j < K; ++j) t.at(i, j) = root.at(i, j) / row_sum;
  }

  EstimatorBundle out;
  out.n = n;
  out.estimates.assign(static_cast<std::size_t>(K), 0.0);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j)
      out.estimates[static_cast<std::size_t>(i)] += t.at(i, j) * bundle.estimates[static_cast<std::size_t>(j)];

  out.influence = matmul(bundle.influence, transpose(t));
  out.variances.assign(static_cast<std::size_t>(K), 0.0);
  out.labels.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += out.influence.at(i, k);
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = out.influence.at(i, k) - mean;
      var += d * d;
    }
    out.variances[static_cast<std::size_t>(k)] = var / n;
    if (!(out.variances[static_cast<std::size_t>(k)] > 0.0))
      throw Error(ErrorKind::IllConditionedTransform,
                  "decorrelation produced a zero-variance estimator");
    out.labels[static_cast<std::size_t>(k)] = "decorr:" + bundle.labels[static_cast<std::size_t>(k)];
  }
  return out;
}

std::vector<double> inverse_variance_weights(const std::vector<double>& variances) {
  if (variances.empty()) throw_domain("inverse_variance_weights: empty input");
  double total = 0.0;
  for (double v : variances) {
    if (!(v > 0.0)) throw_domain("inverse_variance_weights: variances must be positive");
    total += 1.0 / v;
  }
  std::vector<double> weights(variances.size());
  for (std::size_t k = 0; k < variances.size(); ++k)
    weights[k] = (1.0 / variances[k]) / total;
  return weights;
}

namespace {

struct WeightedSpread {
  double theta_w = 0.0;
  double sigma_bet2 = 0.0;
  double alpha_total = 0.0;  // 1 / sum_k 1/Var_k
};

WeightedSpread weighted_spread(const std::vector<double>& estimates,
                               const std::vector<double>& variances,
                               const std::vector<double>& weights) {
  WeightedSpread out;
  for (std::size_t k = 0; k < estimates.size(); ++k) out.theta_w += weights[k] * estimates[k];
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    const double d = estimates[k] - out.theta_w;
    out.sigma_bet2 += weights[k] * d * d;
  }
  double inv_sum = 0.0;
  for (double v : variances) inv_sum += 1.0 / v;
  out.alpha_total = 1.0 / inv_sum;
  return out;
}

}  // namespace

namespace {

// Calibration restricted to the well-determined eigendirections of the
// estimator correlation. Equals the decorrelate-then-weight computation when
// the correlation has full numerical rank; with redundant estimators (the
// influence columns span fewer than K directions) the redundant directions
// carry no information about the perturbation scale and only inject noise,
// so they are dropped and the chi-square budget becomes rank - 1.
CalibrationResult rank_truncated_ci(const EstimatorBundle& bundle, double alpha,
                                    const SymMatrix& cov, const SymEigen& corr_eig,
                                    int rank) {
  const int K = bundle.K();
  const int n = bundle.n;

  std::vector<double> scale(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) scale[static_cast<std::size_t>(k)] = std::sqrt(cov.at(k, k));

  // Coordinates of the estimates in the retained correlation eigenbasis.
  const int first = K - rank;  // eigenvalues sorted ascending
  std::vector<double> z(static_cast<std::size_t>(rank)), g(static_cast<std::size_t>(rank)),
      lambda(static_cast<std::size_t>(rank));
  for (int j = 0; j < rank; ++j) {
    const int col = first + j;
    double zj = 0.0, gj = 0.0;
    for (int k = 0; k < K; ++k) {
      zj += corr_eig.vectors.at(k, col) * bundle.estimates[static_cast<std::size_t>(k)] /
            scale[static_cast<std::size_t>(k)];
      gj += corr_eig.vectors.at(k, col) / scale[static_cast<std::size_t>(k)];
    }
    z[static_cast<std::size_t>(j)] = zj;
    g[static_cast<std::size_t>(j)] = gj;
    lambda[static_cast<std::size_t>(j)] = corr_eig.values[static_cast<std::size_t>(col)];
  }

  double precision = 0.0, cross = 0.0;
  for (int j = 0; j < rank; ++j) {
    precision += g[static_cast<std::size_t>(j)] * g[static_cast<std::size_t>(j)] / lambda[static_cast<std::size_t>(j)];
    cross += g[static_cast<std::size_t>(j)] * z[static_cast<std::size_t>(j)] / lambda[static_cast<std::size_t>(j)];
  }
  if (!(precision > 0.0))
    throw Error(ErrorKind::IllConditionedTransform,
                "calibrated_ci: retained directions carry no agreement component");
  const double theta_w = cross / precision;
  double spread = 0.0;
  for (int j = 0; j < rank; ++j) {
    const double resid = z[static_cast<std::size_t>(j)] - theta_w * g[static_cast<std::size_t>(j)];
    spread += resid * resid / lambda[static_cast<std::size_t>(j)];
  }

  CalibrationResult result;
  result.alpha = alpha;
  result.decorrelated = true;
  result.theta_w = theta_w;
  result.df = rank - 1;
  result.sigma_bet = std::sqrt(spread / precision);
  result.degenerate = !(spread > 0.0);

  const double half = t_quantile(result.df, 1.0 - alpha / 2.0) * result.sigma_bet /
                      std::sqrt(static_cast<double>(result.df));
  result.lower = theta_w - half;
  result.upper = theta_w + half;
  result.delta_hat = std::max(1.0, std::sqrt(static_cast<double>(n) * spread / result.df));

  // Effective linear combination applied to the original estimates; sums to
  // one but, unlike the diagonal case, entries may be negative.
  result.weights.assign(static_cast<std::size_t>(K), 0.0);
  for (int k = 0; k < K; ++k) {
    double wk = 0.0;
    for (int j = 0; j < rank; ++j)
      wk += corr_eig.vectors.at(k, first + j) * g[static_cast<std::size_t>(j)] / lambda[static_cast<std::size_t>(j)];
    result.weights[static_cast<std::size_t>(k)] = wk / (scale[static_cast<std::size_t>(k)] * precision);
  }
  return result;
}

}  // namespace

CalibrationResult calibrated_ci(const EstimatorBundle& bundle, double alpha,
                                bool auto_decorrelate, double ridge) {
  bundle.validate();
  if (!(alpha > 0.0 && alpha < 1.0)) throw_domain("calibrated_ci: alpha must lie in (0,1)");

  const EstimatorBundle* active = &bundle;
  EstimatorBundle transformed;
  bool decorrelated = false;
  if (auto_decorrelate) {
    const SymMatrix cov = influence_covariance(bundle);
    double max_corr = 0.0;
    SymMatrix corr(bundle.K());
    for (int j = 0; j < cov.dim(); ++j)
      for (int k = 0; k < cov.dim(); ++k) {
        corr.at(j, k) = cov.at(j, k) / std::sqrt(cov.at(j, j) * cov.at(k, k));
        if (k > j) max_corr = std::max(max_corr, std::fabs(corr.at(j, k)));
      }

    const SymEigen corr_eig = eigen_sym(corr);
    const double lambda_max = corr_eig.values.back();
    int rank = 0;
    for (double lam : corr_eig.values) rank += (lam > kRankTolerance * lambda_max);

    if (rank < 2) {
      // All estimators numerically identical: zero-width interval flagged
      // as degenerate rather than an error (duplicated specifications are
      // legal input).
      const std::vector<double> weights = inverse_variance_weights(bundle.variances);
      const WeightedSpread w = weighted_spread(bundle.estimates, bundle.variances, weights);
      CalibrationResult result;
      result.alpha = alpha;
      result.weights = weights;
      result.decorrelated = false;
      result.df = bundle.K() - 1;
      result.theta_w = w.theta_w;
      result.sigma_bet = 0.0;
      result.degenerate = true;
      result.lower = w.theta_w;
      result.upper = w.theta_w;
      result.delta_hat = 1.0;
      return result;
    }
    if (rank < bundle.K()) return rank_truncated_ci(bundle, alpha, cov, corr_eig, rank);
    if (max_corr > kAutoDecorrelateThreshold) {
      transformed = decorrelate(bundle, ridge);
      active = &transformed;
      decorrelated = true;
    }
  }

  const int K = active->K();
  const std::vector<double> weights = inverse_variance_weights(active->variances);
  const WeightedSpread w = weighted_spread(active->estimates, active->variances, weights);

  CalibrationResult result;
  result.alpha = alpha;
  result.weights = weights;
  result.decorrelated = decorrelated;
  result.df = K - 1;
  result.theta_w = w.theta_w;
  result.sigma_bet = std::sqrt(w.sigma_bet2);
  result.degenerate = !(w.sigma_bet2 > 0.0);

  const double half = t_quantile(K - 1, 1.0 - alpha / 2.0) * result.sigma_bet /
                      std::sqrt(static_cast<double>(K - 1));
  result.lower = w.theta_w - half;
  result.upper = w.theta_w + half;

  const double delta2 = static_cast<double>(active->n) * w.sigma_bet2 /
                        ((K - 1) * w.alpha_total);
  result.delta_hat = std::max(1.0, std::sqrt(delta2));
  return result;
}

Interval scaled_estimator_ci(const EstimatorBundle& bundle, int k, double delta_hat,
                             double alpha) {
  bundle.validate();
  if (k < 0 || k >= bundle.K()) throw_domain("scaled_estimator_ci: estimator index out of range");
  if (!(delta_hat >= 1.0)) throw_domain("scaled_estimator_ci: delta_hat must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw_domain("scaled_estimator_ci: alpha must lie in (0,1)");
  const double half = gaussian_quantile(1.0 - alpha / 2.0) * delta_hat *
                      std::sqrt(bundle.variances[static_cast<std::size_t>(k)] /
                                static_cast<double>(bundle.n));
  return {bundle.estimates[static_cast<std::size_t>(k)] - half,
          bundle.estimates[static_cast<std::size_t>(k)] + half};
}

Interval calibrated_estimator_ci(const EstimatorBundle& bundle, int k,
                                 double delta_hat, int df, double alpha) {
  bundle.validate();
  if (k < 0 || k >= bundle.K())
    throw_domain("calibrated_estimator_ci: estimator index out of range");
  if (!(delta_hat >= 1.0))
    throw_domain("calibrated_estimator_ci: delta_hat must be at least 1");
  if (df < 1) throw_domain("calibrated_estimator_ci: df must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw_domain("calibrated_estimator_ci: alpha must lie in (0,1)");
  const double half = t_quantile(df, 1.0 - alpha / 2.0) * delta_hat *
                      std::sqrt(bundle.variances[static_cast<std::size_t>(k)] /
                                static_cast<double>(bundle.n));
  return {bundle.estimates[static_cast<std::size_t>(k)] - half,
          bundle.estimates[static_cast<std::size_t>(k)] + half};
}

CalibrationResult robust_ci(const EstimatorBundle& bundle, int trusted, double alpha) {
  bundle.validate();
  const int K = bundle.K();
  if (K < 3)
    throw Error(ErrorKind::InsufficientEstimators,
                "robust_ci: insufficient estimators (need K >= 3 so that df = K-2 >= 1)");
  if (trusted < 0 || trusted >= K) throw_domain("robust_ci: trusted index out of range");
  if (!(alpha > 0.0 && alpha < 1.0)) throw_domain("robust_ci: alpha must lie in (0,1)");

  std::vector<double> rest_estimates, rest_variances;
  rest_estimates.reserve(static_cast<std::size_t>(K - 1));
  rest_variances.reserve(static_cast<std::size_t>(K - 1));
  for (int k = 0; k < K; ++k) {
    if (k == trusted) continue;
    rest_estimates.push_back(bundle.estimates[static_cast<std::size_t>(k)]);
    rest_variances.push_back(bundle.variances[static_cast<std::size_t>(k)]);
  }
  const std::vector<double> rest_weights = inverse_variance_weights(rest_variances);
  const WeightedSpread w = weighted_spread(rest_estimates, rest_variances, rest_weights);

  const double trusted_var = bundle.variances[static_cast<std::size_t>(trusted)];
  double ratio_sum = 0.0;
  for (double v : rest_variances) ratio_sum += trusted_var / v;

  CalibrationResult result;
  result.alpha = alpha;
  result.df = K - 2;
  result.theta_w = bundle.estimates[static_cast<std::size_t>(trusted)];
  result.sigma_bet = std::sqrt(w.sigma_bet2);
  result.degenerate = !(w.sigma_bet2 > 0.0);
  result.decorrelated = false;

  const double half = t_quantile(K - 2, 1.0 - alpha / 2.0) * std::sqrt(ratio_sum) *
                      result.sigma_bet / std::sqrt(static_cast<double>(K - 2));
  result.lower = result.theta_w - half;
  result.upper = result.theta_w + half;

  const double delta2 = static_cast<double>(bundle.n) * w.sigma_bet2 /
                        ((K - 2) * w.alpha_total);
  result.delta_hat = std::max(1.0, std::sqrt(delta2));

  // Weight vector over all K with zero at the trusted position, mirroring
  // the spread computation.
  result.weights.assign(static_cast<std::size_t>(K), 0.0);
  int idx = 0;
  for (int k = 0; k < K; ++k) {
    if (k == trusted) continue;
    result.weights[static_cast<std::size_t>(k)] = rest_weights[static_cast<std::size_t>(idx++)];
  }
  return result;
}

double delta_hat_simple(const EstimatorBundle& bundle, double known_sigma2) {
  bundle.validate();
  if (!(known_sigma2 > 0.0)) throw_domain("delta_hat_simple: known_sigma2 must be positive");
  const int K = bundle.K();
  double pooled = 0.0;
  for (double e : bundle.estimates) pooled += e;
  pooled /= K;
  double ss = 0.0;
  for (double e : bundle.estimates) ss += (e - pooled) * (e - pooled);
  return std::sqrt(static_cast<double>(bundle.n) * ss / ((K - 1) * known_sigma2));
}

}  // namespace distcal
