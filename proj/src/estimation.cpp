#include "distcal/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "distcal/csv.hpp"
#include "distcal/errors.hpp"
#include "distcal/special.hpp"

namespace distcal {

int Dataset::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < column_names.size(); ++i)
    if (column_names[i] == name) return static_cast<int>(i);
  throw Error(ErrorKind::Ingestion, "column not found: " + name);
}

void Dataset::validate() const {
  if (values.rows != static_cast<int>(response.size()))
    throw_domain("Dataset: response length does not match row count");
  if (static_cast<int>(column_names.size()) != values.cols)
    throw_domain("Dataset: column name count does not match value columns");
  std::set<std::string> seen(column_names.begin(), column_names.end());
  if (seen.size() != column_names.size())
    throw_domain("Dataset: column names must be unique");
  for (double v : values.data)
    if (!std::isfinite(v)) throw_domain("Dataset: non-finite covariate value");
  for (double v : response)
    if (!std::isfinite(v)) throw_domain("Dataset: non-finite response value");
}

Dataset Dataset::from_csv(const std::string& path, const std::string& response_column,
                          char delimiter) {
  const CsvTable table = read_csv(path, delimiter);
  int response_idx = -1;
  for (std::size_t j = 0; j < table.header.size(); ++j)
    if (table.header[j] == response_column) response_idx = static_cast<int>(j);
  if (response_idx < 0)
    throw Error(ErrorKind::Ingestion, "response column not found: " + response_column);

  Dataset data;
  data.response_name = response_column;
  for (std::size_t j = 0; j < table.header.size(); ++j)
    if (static_cast<int>(j) != response_idx) data.column_names.push_back(table.header[j]);

  const int n = static_cast<int>(table.rows.size());
  const int p = static_cast<int>(table.header.size()) - 1;
  data.values = Matrix(n, p);
  data.response.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int col = 0;
    for (std::size_t j = 0; j < table.rows[static_cast<std::size_t>(i)].size(); ++j) {
      const std::string& field = table.rows[static_cast<std::size_t>(i)][j];
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') {
        std::ostringstream os;
        os << path << ": non-numeric value '" << field << "' in column '"
           << table.header[j] << "' row " << i + 1;
        throw Error(ErrorKind::Ingestion, os.str());
      }
      if (static_cast<int>(j) == response_idx) {
        data.response[static_cast<std::size_t>(i)] = v;
      } else {
        data.values.at(i, col++) = v;
      }
    }
  }
  data.validate();
  return data;
}

void AdjustmentSet::validate(const Dataset& data) const {
  if (indices.empty()) throw_domain("AdjustmentSet: empty index set");
  std::set<int> seen(indices.begin(), indices.end());
  if (seen.size() != indices.size())
    throw_domain("AdjustmentSet: indices must be distinct");
  for (int idx : indices)
    if (idx < 0 || idx >= data.n_columns())
      throw_domain("AdjustmentSet: column index out of range");
  if (target_position < 0 || target_position >= static_cast<int>(indices.size()))
    throw_domain("AdjustmentSet: target position out of range");
}

AdjustmentSet AdjustmentSet::from_names(const Dataset& data,
                                        const std::vector<std::string>& names,
                                        const std::string& target) {
  AdjustmentSet set;
  set.target_position = -1;
  std::ostringstream label;
  label << "{";
  for (std::size_t i = 0; i < names.size(); ++i) {
    set.indices.push_back(data.column_index(names[i]));
    if (names[i] == target) set.target_position = static_cast<int>(i);
    label << (i ? "," : "") << names[i];
  }
  label << "}";
  set.label = label.str();
  if (set.target_position < 0)
    throw_domain("AdjustmentSet: target '" + target + "' not in set " + set.label);
  set.validate(data);
  return set;
}

namespace {

// Column-pivoted Householder QR of the n x p design (p small). Keeps the
// reflections applied to a carried right-hand side.
struct PivotedQr {
  Matrix r;               // upper triangle of R in pivoted order
  std::vector<int> perm;  // perm[j] = original column of pivoted column j
  std::vector<double> qty;  // Q^T y

  int p() const { return r.cols; }
};

PivotedQr pivoted_qr(Matrix a, std::vector<double> y, const std::string& label) {
  const int n = a.rows;
  const int p = a.cols;
  if (n <= p)
    throw_domain("ols_fit: need more rows than design columns for set " + label);

  PivotedQr qr;
  qr.perm.resize(static_cast<std::size_t>(p));
  std::iota(qr.perm.begin(), qr.perm.end(), 0);

  std::vector<double> col_norm2(static_cast<std::size_t>(p), 0.0);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < n; ++i) col_norm2[static_cast<std::size_t>(j)] += a.at(i, j) * a.at(i, j);

  std::vector<double> diag(static_cast<std::size_t>(p), 0.0);
  for (int k = 0; k < p; ++k) {
    int best = k;
    double best_norm = -1.0;
    for (int j = k; j < p; ++j) {
      double nrm = 0.0;
      for (int i = k; i < n; ++i) nrm += a.at(i, j) * a.at(i, j);
      if (nrm > best_norm) {
        best_norm = nrm;
        best = j;
      }
    }
    if (best != k) {
      for (int i = 0; i < n; ++i) std::swap(a.at(i, k), a.at(i, best));
      std::swap(qr.perm[static_cast<std::size_t>(k)], qr.perm[static_cast<std::size_t>(best)]);
    }

    double alpha = std::sqrt(std::max(best_norm, 0.0));
    if (a.at(k, k) > 0) alpha = -alpha;
    diag[static_cast<std::size_t>(k)] = alpha;
    if (alpha == 0.0) continue;  // exactly dependent column; caught by rank check

    // Householder vector v stored in column k below the diagonal.
    a.at(k, k) -= alpha;
    double vnorm2 = 0.0;
    for (int i = k; i < n; ++i) vnorm2 += a.at(i, k) * a.at(i, k);
    if (vnorm2 > 0.0) {
      for (int j = k + 1; j < p; ++j) {
        double dot = 0.0;
        for (int i = k; i < n; ++i) dot += a.at(i, k) * a.at(i, j);
        const double f = 2.0 * dot / vnorm2;
        for (int i = k; i < n; ++i) a.at(i, j) -= f * a.at(i, k);
      }
      double dot = 0.0;
      for (int i = k; i < n; ++i) dot += a.at(i, k) * y[static_cast<std::size_t>(i)];
      const double f = 2.0 * dot / vnorm2;
      for (int i = k; i < n; ++i) y[static_cast<std::size_t>(i)] -= f * a.at(i, k);
    }
  }

  qr.r = Matrix(p, p);
  for (int i = 0; i < p; ++i) {
    qr.r.at(i, i) = diag[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < p; ++j) qr.r.at(i, j) = a.at(i, j);
  }
  qr.qty.assign(y.begin(), y.begin() + p);

  double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < p; ++i) {
    const double d = std::fabs(qr.r.at(i, i));
    dmax = std::max(dmax, d);
    dmin = std::min(dmin, d);
  }
  if (!(dmin > 1e-10 * dmax)) {
    std::ostringstream os;
    os << "collinear design for adjustment set " << label << " (diagonal ratio "
       << (dmax > 0 ? dmin / dmax : 0.0) << ")";
    throw Error(ErrorKind::Collinearity, os.str());
  }
  return qr;
}

std::vector<double> solve_upper(const Matrix& r, std::vector<double> b) {
  const int p = r.cols;
  for (int i = p - 1; i >= 0; --i) {
    for (int j = i + 1; j < p; ++j) b[static_cast<std::size_t>(i)] -= r.at(i, j) * b[static_cast<std::size_t>(j)];
    b[static_cast<std::size_t>(i)] /= r.at(i, i);
  }
  return b;
}

std::vector<double> solve_upper_transposed(const Matrix& r, std::vector<double> b) {
  const int p = r.cols;
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < i; ++j) b[static_cast<std::size_t>(i)] -= r.at(j, i) * b[static_cast<std::size_t>(j)];
    b[static_cast<std::size_t>(i)] /= r.at(i, i);
  }
  return b;
}

}  // namespace

std::vector<OlsFit> ols_fit_multi(const Dataset& data, const std::vector<int>& indices,
                                  const std::vector<int>& target_positions,
                                  const std::string& label) {
  data.validate();
  const int n = data.n();
  const int p = static_cast<int>(indices.size()) + 1;  // with intercept
  for (int idx : indices)
    if (idx < 0 || idx >= data.n_columns())
      throw_domain("ols_fit: column index out of range for set " + label);
  for (int t : target_positions)
    if (t < 0 || t >= static_cast<int>(indices.size()))
      throw_domain("ols_fit: target position out of range for set " + label);

  Matrix design(n, p);
  for (int i = 0; i < n; ++i) {
    design.at(i, 0) = 1.0;
    for (std::size_t j = 0; j < indices.size(); ++j)
      design.at(i, static_cast<int>(j) + 1) = data.values.at(i, indices[j]);
  }

  const PivotedQr qr = pivoted_qr(design, data.response, label);

  // Coefficients in pivoted order, then undone.
  const std::vector<double> beta_piv = solve_upper(qr.r, qr.qty);
  std::vector<double> beta(static_cast<std::size_t>(p), 0.0);
  for (int j = 0; j < p; ++j) beta[static_cast<std::size_t>(qr.perm[static_cast<std::size_t>(j)])] = beta_piv[static_cast<std::size_t>(j)];

  std::vector<double> residual(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double xb = beta[0];
    for (std::size_t j = 0; j < indices.size(); ++j)
      xb += data.values.at(i, indices[j]) * beta[j + 1];
    residual[static_cast<std::size_t>(i)] = data.response[static_cast<std::size_t>(i)] - xb;
  }

  std::vector<OlsFit> fits;
  fits.reserve(target_positions.size());
  for (int t : target_positions) {
    const int target_col = t + 1;
    // z = (X^T X)^{-1} e_t through the pivoted factors.
    std::vector<double> e(static_cast<std::size_t>(p), 0.0);
    for (int j = 0; j < p; ++j)
      if (qr.perm[static_cast<std::size_t>(j)] == target_col) e[static_cast<std::size_t>(j)] = 1.0;
    const std::vector<double> u = solve_upper_transposed(qr.r, std::move(e));
    const std::vector<double> v = solve_upper(qr.r, u);
    std::vector<double> z(static_cast<std::size_t>(p), 0.0);
    for (int j = 0; j < p; ++j) z[static_cast<std::size_t>(qr.perm[static_cast<std::size_t>(j)])] = v[static_cast<std::size_t>(j)];

    OlsFit fit;
    fit.theta_hat = beta[static_cast<std::size_t>(target_col)];
    fit.influence.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      double xz = z[0];
      for (std::size_t j = 0; j < indices.size(); ++j)
        xz += data.values.at(i, indices[j]) * z[j + 1];
      fit.influence[static_cast<std::size_t>(i)] =
          static_cast<double>(n) * xz * residual[static_cast<std::size_t>(i)];
    }
    fits.push_back(std::move(fit));
  }
  return fits;
}

OlsFit ols_fit(const Dataset& data, const AdjustmentSet& set) {
  set.validate(data);
  return ols_fit_multi(data, set.indices, {set.target_position}, set.label).front();
}

void EstimatorBundle::validate() const {
  if (K() < 2) throw_domain("EstimatorBundle: need at least 2 estimators");
  if (influence.rows != n || influence.cols != K())
    throw_domain("EstimatorBundle: influence matrix shape mismatch");
  if (static_cast<int>(variances.size()) != K() ||
      static_cast<int>(labels.size()) != K())
    throw_domain("EstimatorBundle: field length mismatch");
  for (double v : variances)
    if (!(v > 0.0)) throw_domain("EstimatorBundle: variances must be positive");
}

EstimatorBundle build_bundle(const Dataset& data, const std::vector<AdjustmentSet>& sets) {
  if (sets.size() < 2) throw_domain("build_bundle: need at least 2 adjustment sets");
  const int n = data.n();
  const int K = static_cast<int>(sets.size());

  EstimatorBundle bundle;
  bundle.n = n;
  bundle.influence = Matrix(n, K);
  bundle.estimates.resize(static_cast<std::size_t>(K));
  bundle.variances.resize(static_cast<std::size_t>(K));
  bundle.labels.resize(static_cast<std::size_t>(K));

  for (int k = 0; k < K; ++k) {
    const OlsFit fit = ols_fit(data, sets[static_cast<std::size_t>(k)]);
    bundle.estimates[static_cast<std::size_t>(k)] = fit.theta_hat;
    bundle.labels[static_cast<std::size_t>(k)] = sets[static_cast<std::size_t>(k)].label;
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += fit.influence[static_cast<std::size_t>(i)];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      bundle.influence.at(i, k) = fit.influence[static_cast<std::size_t>(i)];
      const double d = fit.influence[static_cast<std::size_t>(i)] - mean;
      var += d * d;
    }
    bundle.variances[static_cast<std::size_t>(k)] = var / n;
    if (!(bundle.variances[static_cast<std::size_t>(k)] > 0.0)) {
      throw Error(ErrorKind::Collinearity,
                  "degenerate influence (zero variance) for set " +
                      sets[static_cast<std::size_t>(k)].label);
    }
  }
  return bundle;
}

Interval naive_ci(double theta_hat, double variance, long long n, double alpha) {
  if (!(variance > 0.0)) throw_domain("naive_ci: variance must be positive");
  if (n < 1) throw_domain("naive_ci: n must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw_domain("naive_ci: alpha must lie in (0,1)");
  const double half = gaussian_quantile(1.0 - alpha / 2.0) *
                      std::sqrt(variance / static_cast<double>(n));
  return {theta_hat - half, theta_hat + half};
}

}  // namespace distcal
