#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace contra {

// Dense row-major matrix of doubles. Plain value type used for parameters,
// optimizer moments and all non-differentiated numerics.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  std::string shape_string() const;
  bool operator==(const Matrix&) const = default;
};

Matrix transpose(const Matrix& a);
Matrix multiply(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);
double trace(const Matrix& a);

struct SymmetricEigen {
  std::vector<double> values;  // ascending
  Matrix vectors;              // columns are eigenvectors
};

// Cyclic Jacobi rotation eigensolver for symmetric matrices.
SymmetricEigen jacobi_eigen(const Matrix& symmetric, double tol = 1e-15, int max_sweeps = 100);

// Square root of a symmetric PSD matrix; negative eigenvalues are clamped at 0.
Matrix psd_sqrt(const Matrix& symmetric);

// Largest singular value from the eigenvalues of WᵀW (brute force, no power iteration).
double largest_singular_value(const Matrix& w);

}  // namespace contra
