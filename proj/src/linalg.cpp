#include "distcal/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "distcal/errors.hpp"

namespace distcal {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw_domain("matmul: dimension mismatch");
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) out.at(i, j) += aik * b.at(k, j);
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

SymMatrix::SymMatrix(int dim) : dim_(dim), data_(static_cast<std::size_t>(dim) * dim, 0.0) {
  if (dim < 1) throw_domain("SymMatrix: dimension must be positive");
}

SymMatrix SymMatrix::from_dense(const Matrix& m) {
  if (m.rows != m.cols) throw_domain("SymMatrix: matrix must be square");
  double scale = 0.0;
  for (double v : m.data) scale = std::max(scale, std::fabs(v));
  SymMatrix out(m.rows);
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      const double gap = std::fabs(m.at(i, j) - m.at(j, i));
      if (gap > 1e-12 * std::max(1.0, scale)) {
        std::ostringstream os;
        os << "SymMatrix: asymmetry " << gap << " at (" << i << "," << j
           << ") exceeds tolerance";
        throw_domain(os.str());
      }
      out.at(i, j) = 0.5 * (m.at(i, j) + m.at(j, i));
    }
  }
  return out;
}

void SymMatrix::enforce_symmetry() {
  for (int i = 0; i < dim_; ++i)
    for (int j = i + 1; j < dim_; ++j) {
      const double v = 0.5 * (at(i, j) + at(j, i));
      at(i, j) = v;
      at(j, i) = v;
    }
}

Matrix SymMatrix::dense() const {
  Matrix out(dim_, dim_);
  out.data = data_;
  return out;
}

SymEigen eigen_sym(const SymMatrix& m) {
  const int n = m.dim();
  Matrix a = m.dense();
  Matrix v(n, n);
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

  auto off_diagonal_norm = [&]() {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(2.0 * s);
  };

  double scale = 0.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::fabs(a.at(i, i)));
  scale = std::max(scale, off_diagonal_norm());
  const double tol = 1e-15 * std::max(scale, 1e-300) * n;

  for (int sweep = 0; sweep < 100 && off_diagonal_norm() > tol; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::fabs(apq) <= tol / (n * n)) continue;
        const double app = a.at(p, p);
        const double aqq = a.at(q, q);
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a.at(k, p);
          const double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a.at(p, k);
          const double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v.at(k, p);
          const double vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  SymEigen out;
  out.values.resize(n);
  for (int i = 0; i < n; ++i) out.values[i] = a.at(i, i);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return out.values[x] < out.values[y]; });
  SymEigen sorted;
  sorted.values.resize(n);
  sorted.vectors = Matrix(n, n);
  for (int j = 0; j < n; ++j) {
    sorted.values[j] = out.values[order[j]];
    for (int i = 0; i < n; ++i) sorted.vectors.at(i, j) = v.at(i, order[j]);
  }
  return sorted;
}

SymMatrix sym_inverse_sqrt(const SymMatrix& m, double ridge) {
  if (ridge < 0.0) throw_domain("sym_inverse_sqrt: ridge must be nonnegative");
  const int n = m.dim();
  const SymEigen eig = eigen_sym(m);
  const double lo = eig.values.front() + ridge;
  const double hi = eig.values.back() + ridge;
  if (lo <= n * 1e-12 * std::max(hi, 0.0)) {
    std::ostringstream os;
    os << "sym_inverse_sqrt: matrix not safely positive definite "
       << "(smallest eigenvalue " << lo << ", largest " << hi << ")";
    throw Error(ErrorKind::Singularity, os.str());
  }
  SymMatrix out(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k)
        s += eig.vectors.at(i, k) * eig.vectors.at(j, k) /
             std::sqrt(eig.values[k] + ridge);
      out.at(i, j) = s;
      out.at(j, i) = s;
    }
  }
  return out;
}

}  // namespace distcal
