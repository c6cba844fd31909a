// Stationary unit-amplitude covariance functions: squared exponential with a
// shared lengthscale and its ARD (per-dimension lengthscale) variant.
#pragma once

#include "emgpr/common.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace emgpr {

enum class KernelKind { SquaredExponential, Ard };

/// Lengthscale parameterization of a unit-amplitude squared exponential
/// kernel,
///   k(x, x') = exp(-sum_i (x_i - x'_i)^2 / (2 alpha_i^2)),
/// with a single shared alpha (SquaredExponential) or one per input
/// dimension (Ard).
struct KernelSpec {
  KernelKind kind = KernelKind::SquaredExponential;
  Vector lengthscales = Vector::Ones(1);

  static KernelSpec se(double lengthscale) {
    KernelSpec spec;
    spec.kind = KernelKind::SquaredExponential;
    spec.lengthscales = Vector::Constant(1, lengthscale);
    return spec;
  }

  static KernelSpec ard(Vector lengthscales) {
    KernelSpec spec;
    spec.kind = KernelKind::Ard;
    spec.lengthscales = std::move(lengthscales);
    return spec;
  }

  /// Number of free lengthscale parameters.
  Index param_count() const { return lengthscales.size(); }

  /// Checks positivity and the size contract against an input dimension.
  void validate(Index input_dim) const {
    if (kind == KernelKind::SquaredExponential && lengthscales.size() != 1)
      throw std::invalid_argument("KernelSpec: shared-lengthscale kernel expects exactly one lengthscale, got " +
                                  std::to_string(lengthscales.size()));
    if (kind == KernelKind::Ard && lengthscales.size() != input_dim)
      throw std::invalid_argument("KernelSpec: ARD kernel expects " + std::to_string(input_dim) +
                                  " lengthscales (one per input dimension), got " +
                                  std::to_string(lengthscales.size()));
    for (Index i = 0; i < lengthscales.size(); ++i) {
      if (!(lengthscales[i] > 0.0) || !std::isfinite(lengthscales[i]))
        throw std::invalid_argument("KernelSpec: lengthscale " + std::to_string(i) +
                                    " must be positive and finite, got " +
                                    std::to_string(lengthscales[i]));
    }
  }
};

/// Gram matrix together with a flag recording whether it was built from a
/// single input set (and is therefore exactly symmetric with a unit
/// diagonal).
struct GramMatrix {
  Matrix values;
  bool symmetric = false;
};

namespace detail {

/// Squared distance between rows scaled by the kernel's lengthscales:
/// sum_i (a_i - b_i)^2 / (2 alpha_i^2).
inline double scaled_sqdist(const KernelSpec& spec, const Eigen::Ref<const Eigen::RowVectorXd>& a,
                            const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  if (spec.kind == KernelKind::SquaredExponential) {
    const double alpha = spec.lengthscales[0];
    return (a - b).squaredNorm() / (2.0 * alpha * alpha);
  }
  double total = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    const double alpha = spec.lengthscales[i];
    total += diff * diff / (2.0 * alpha * alpha);
  }
  return total;
}

}  // namespace detail

/// Single kernel evaluation k(x, x') in (0, 1].
inline double kernel_eval(const KernelSpec& spec, const Vector& x, const Vector& x2) {
  if (x.size() != x2.size())
    throw std::invalid_argument("kernel_eval: input dimensions differ (" + std::to_string(x.size()) +
                                " vs " + std::to_string(x2.size()) + ")");
  spec.validate(x.size());
  return std::exp(-detail::scaled_sqdist(spec, x.transpose(), x2.transpose()));
}

/// Gram matrix over a single input set: exactly symmetric by construction
/// (the lower triangle is computed and mirrored) with ones on the diagonal.
inline GramMatrix gram(const KernelSpec& spec, const Matrix& X) {
  spec.validate(X.cols());
  const Index n = X.rows();
  GramMatrix result;
  result.symmetric = true;
  result.values.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    result.values(i, i) = 1.0;
    for (Index j = 0; j < i; ++j) {
      const double k = std::exp(-detail::scaled_sqdist(spec, X.row(i), X.row(j)));
      result.values(i, j) = k;
      result.values(j, i) = k;
    }
  }
  return result;
}

/// Cross Gram matrix between two input sets; detects bit-identical inputs and
/// falls back to the symmetric path so k(X, X) never depends on which
/// overload the caller picked.
inline GramMatrix gram(const KernelSpec& spec, const Matrix& X, const Matrix& X2) {
  if (X.cols() != X2.cols())
    throw std::invalid_argument("gram: input dimensions differ (" + std::to_string(X.cols()) +
                                " vs " + std::to_string(X2.cols()) + ")");
  if (X.rows() == X2.rows() && X.cols() == X2.cols() &&
      (X.array() == X2.array()).all())
    return gram(spec, X);
  spec.validate(X.cols());
  GramMatrix result;
  result.symmetric = false;
  result.values.resize(X.rows(), X2.rows());
  for (Index i = 0; i < X.rows(); ++i)
    for (Index j = 0; j < X2.rows(); ++j)
      result.values(i, j) = std::exp(-detail::scaled_sqdist(spec, X.row(i), X2.row(j)));
  return result;
}

/// Elementwise derivative of the Gram matrix with respect to lengthscale
/// `dim`.  For the shared-lengthscale kernel only dim == 0 is valid and the
/// derivative sums over all input dimensions:
///   d k / d alpha     = k * |x - x'|^2 / alpha^3        (shared)
///   d k / d alpha_dim = k * (x_dim - x'_dim)^2 / alpha_dim^3   (ARD)
inline Matrix gram_grad_lengthscale(const KernelSpec& spec, const Matrix& X, Index dim) {
  spec.validate(X.cols());
  if (dim < 0 || dim >= spec.param_count())
    throw std::invalid_argument("gram_grad_lengthscale: lengthscale index " + std::to_string(dim) +
                                " out of range [0, " + std::to_string(spec.param_count()) + ")");
  const Index n = X.rows();
  Matrix grad = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < i; ++j) {
      const double k = std::exp(-detail::scaled_sqdist(spec, X.row(i), X.row(j)));
      double sq;  // squared distance governed by this lengthscale
      const double alpha = spec.lengthscales[dim];
      if (spec.kind == KernelKind::SquaredExponential) {
        sq = (X.row(i) - X.row(j)).squaredNorm();
      } else {
        const double diff = X(i, dim) - X(j, dim);
        sq = diff * diff;
      }
      const double g = k * sq / (alpha * alpha * alpha);
      grad(i, j) = g;
      grad(j, i) = g;
    }
  }
  return grad;
}

}  // namespace emgpr
