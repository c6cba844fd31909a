// Shared helpers for the test suite: independent reference implementations
// (naive Kronecker products, dense log-likelihood) and small utilities.
// These are deliberately written with different algorithms than the library
// so that agreement is meaningful.
#pragma once

#include "emgpr/common.hpp"

#include <functional>
#include <random>

namespace test_support {

using emgpr::Index;
using emgpr::Matrix;
using emgpr::Vector;

/// Literal Kronecker product, element by element.
inline Matrix naive_kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Dense log N(y | 0, K) via LU decomposition: an independent route from the
/// library's Cholesky-based computation.
inline double dense_log_density(const Matrix& k, const Vector& y) {
  Eigen::PartialPivLU<Matrix> lu(k);
  const Vector solved = lu.solve(y);
  double log_det = 0.0;
  for (Index i = 0; i < k.rows(); ++i)
    log_det += std::log(std::abs(lu.matrixLU()(i, i)));
  return -0.5 * y.dot(solved) - 0.5 * log_det -
         0.5 * static_cast<double>(y.size()) * std::log(2.0 * 3.14159265358979323846);
}

/// Central finite differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-6) {
  Vector grad(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    grad[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return grad;
}

/// Deterministic uniform matrix in [lo, hi).
inline Matrix uniform_matrix(Index rows, Index cols, std::uint64_t seed, double lo = 0.0,
                             double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = dist(rng);
  return out;
}

/// Deterministic standard-normal vector.
inline Vector normal_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector out(n);
  for (Index i = 0; i < n; ++i) out[i] = dist(rng);
  return out;
}

}  // namespace test_support
