#pragma once

#include <cstddef>
#include <vector>

namespace distcal {

// Small dense row-major matrix. Sized for this problem class (K estimators,
// a handful of covariates), not a general linear algebra library.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Symmetric matrix with symmetry checked on construction (1e-12 relative
// tolerance) and enforced by storing the symmetrized entries.
class SymMatrix {
 public:
  explicit SymMatrix(int dim);
  static SymMatrix from_dense(const Matrix& m);

  int dim() const noexcept { return dim_; }
  double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dim_ + j]; }
  double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim_ + j]; }

  // Symmetrizes in place; call after writing entries through at().
  void enforce_symmetry();

  Matrix dense() const;

 private:
  int dim_;
  std::vector<double> data_;
};

struct SymEigen {
  std::vector<double> values;  // ascending
  Matrix vectors;              // columns are eigenvectors
};

// Cyclic Jacobi rotations; intended for dim <= 32.
SymEigen eigen_sym(const SymMatrix& m);

// Returns R with R * (M + ridge*I) * R = I. Throws a singularity error
// carrying the offending eigenvalue when M + ridge*I is not safely positive
// definite (smallest eigenvalue <= dim * 1e-12 * largest).
SymMatrix sym_inverse_sqrt(const SymMatrix& m, double ridge = 0.0);

}  // namespace distcal
