// Sum-of-Kronecker-products covariance over D tasks:
//   K_y = sum_q B_q (x) K_q + diag(noise_1^2 .. noise_D^2) (x) I_N,
// where each coregionalization matrix B_q = T_q T_q^T is parameterized by a
// D x k matrix of weight vectors.  Vectors over tasks use task-major order:
// all points of task 1, then all points of task 2, and so on.
#pragma once

#include "emgpr/common.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace emgpr {

/// The weight vectors defining the coregionalization terms.  terms[q] is a
/// D x k matrix whose columns are the weight vectors of term q; the induced
/// B_q = terms[q] terms[q]^T is positive semi-definite by construction.
struct WeightSet {
  std::vector<Matrix> terms;

  Index term_count() const { return static_cast<Index>(terms.size()); }
  Index task_count() const { return terms.empty() ? 0 : terms.front().rows(); }
  Index rank() const { return terms.empty() ? 0 : terms.front().cols(); }
  Index size() const { return term_count() * task_count() * rank(); }

  /// The no-transfer initialization: one rank-1 term per task with
  /// w_q = e_q, so every B_q selects a single diagonal entry.
  static WeightSet deltas(Index tasks) {
    if (tasks <= 0) throw std::invalid_argument("WeightSet::deltas: need at least one task");
    WeightSet w;
    w.terms.reserve(static_cast<std::size_t>(tasks));
    for (Index q = 0; q < tasks; ++q) {
      Matrix t = Matrix::Zero(tasks, 1);
      t(q, 0) = 1.0;
      w.terms.push_back(std::move(t));
    }
    return w;
  }

  void validate() const {
    if (terms.empty()) throw std::invalid_argument("WeightSet: no terms");
    const Index tasks = terms.front().rows();
    const Index k = terms.front().cols();
    if (tasks <= 0 || k <= 0) throw std::invalid_argument("WeightSet: empty term matrix");
    for (std::size_t q = 0; q < terms.size(); ++q) {
      if (terms[q].rows() != tasks || terms[q].cols() != k)
        throw std::invalid_argument("WeightSet: term " + std::to_string(q) +
                                    " has inconsistent shape");
      if (!terms[q].allFinite())
        throw std::invalid_argument("WeightSet: term " + std::to_string(q) +
                                    " contains non-finite values");
    }
  }

  /// B_q = T_q T_q^T, exactly symmetric (computed one triangle, mirrored).
  Matrix coregionalization(Index q) const {
    const Matrix& t = terms[static_cast<std::size_t>(q)];
    Matrix b = Matrix::Zero(t.rows(), t.rows());
    b.selfadjointView<Eigen::Lower>().rankUpdate(t);
    b.triangularView<Eigen::StrictlyUpper>() = b.transpose();
    return b;
  }

  /// Column-major flattening of each term, terms concatenated in order.
  Vector flatten() const {
    Vector flat(size());
    Index offset = 0;
    for (const Matrix& t : terms) {
      flat.segment(offset, t.size()) = Eigen::Map<const Vector>(t.data(), t.size());
      offset += t.size();
    }
    return flat;
  }

  static WeightSet unflatten(const Vector& flat, Index term_count, Index tasks, Index rank) {
    if (flat.size() != term_count * tasks * rank)
      throw std::invalid_argument("WeightSet::unflatten: expected " +
                                  std::to_string(term_count * tasks * rank) + " entries, got " +
                                  std::to_string(flat.size()));
    WeightSet w;
    Index offset = 0;
    for (Index q = 0; q < term_count; ++q) {
      w.terms.push_back(Eigen::Map<const Matrix>(flat.data() + offset, tasks, rank));
      offset += tasks * rank;
    }
    return w;
  }
};

/// Task-major stacking of a multi-task target matrix (N x D): column d of Y
/// occupies entries [d*N, (d+1)*N).
inline Vector flatten_tasks(const Matrix& Y) {
  return Eigen::Map<const Vector>(Y.data(), Y.size());
}

inline Matrix unflatten_tasks(const Vector& v, Index points, Index tasks) {
  if (v.size() != points * tasks)
    throw std::invalid_argument("unflatten_tasks: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), points, tasks);
}

/// The assembled joint covariance with a lazily computed, cached Cholesky
/// factor.  Copies share the cache; computing the factor concurrently from
/// several threads on the same instance is not supported (parallel code paths
/// each own their covariance).
class StructuredCovariance {
 public:
  StructuredCovariance(WeightSet weights, std::vector<Matrix> grams, Vector noise_std,
                       double jitter = 1e-10)
      : weights_(std::move(weights)),
        grams_(std::move(grams)),
        noise_std_(std::move(noise_std)),
        jitter_(jitter) {
    weights_.validate();
    const Index tasks = weights_.task_count();
    if (static_cast<Index>(grams_.size()) != weights_.term_count())
      throw std::invalid_argument("StructuredCovariance: " + std::to_string(grams_.size()) +
                                  " Gram matrices for " + std::to_string(weights_.term_count()) +
                                  " weight terms");
    if (grams_.empty()) throw std::invalid_argument("StructuredCovariance: no Gram matrices");
    const Index n = grams_.front().rows();
    for (std::size_t q = 0; q < grams_.size(); ++q)
      if (grams_[q].rows() != n || grams_[q].cols() != n)
        throw std::invalid_argument("StructuredCovariance: Gram matrix " + std::to_string(q) +
                                    " is not " + std::to_string(n) + "x" + std::to_string(n));
    if (noise_std_.size() != tasks)
      throw std::invalid_argument("StructuredCovariance: expected " + std::to_string(tasks) +
                                  " noise levels, got " + std::to_string(noise_std_.size()));
    for (Index d = 0; d < tasks; ++d)
      if (!(noise_std_[d] >= 0.0) || !std::isfinite(noise_std_[d]))
        throw std::invalid_argument("StructuredCovariance: invalid noise level for task " +
                                    std::to_string(d));

    points_ = n;
    matrix_ = Matrix::Zero(tasks * n, tasks * n);
    for (Index q = 0; q < weights_.term_count(); ++q) {
      const Matrix b = weights_.coregionalization(q);
      const Matrix& k = grams_[static_cast<std::size_t>(q)];
      for (Index a = 0; a < tasks; ++a)
        for (Index c = 0; c < tasks; ++c)
          if (b(a, c) != 0.0) matrix_.block(a * n, c * n, n, n) += b(a, c) * k;
    }
    for (Index d = 0; d < tasks; ++d)
      matrix_.block(d * n, d * n, n, n).diagonal().array() += noise_std_[d] * noise_std_[d];
  }

  Index task_count() const { return weights_.task_count(); }
  Index points() const { return points_; }
  Index total_size() const { return matrix_.rows(); }
  const WeightSet& weights() const { return weights_; }
  const std::vector<Matrix>& grams() const { return grams_; }
  const Vector& noise_std() const { return noise_std_; }
  const Matrix& matrix() const { return matrix_; }

  /// Cholesky factor of the assembled matrix, computed on first use.
  const Eigen::LLT<Matrix>& factor() const {
    if (!factor_) {
      factor_ = std::make_shared<Eigen::LLT<Matrix>>(
          robust_llt(matrix_, jitter_, "StructuredCovariance"));
    }
    return *factor_;
  }

 private:
  WeightSet weights_;
  std::vector<Matrix> grams_;
  Vector noise_std_;
  double jitter_;
  Index points_ = 0;
  Matrix matrix_;
  mutable std::shared_ptr<Eigen::LLT<Matrix>> factor_;
};

/// Builds the joint covariance from Q weight terms, the matching Q Gram
/// matrices, and per-task noise standard deviations (their squares land on
/// the diagonal).
inline StructuredCovariance assemble(const WeightSet& weights, std::vector<Matrix> grams,
                                     Vector noise_std, double jitter = 1e-10) {
  return StructuredCovariance(weights, std::move(grams), std::move(noise_std), jitter);
}

/// Joint log marginal likelihood of a task-major observation vector.
inline double log_marginal_joint(const StructuredCovariance& cov, const Vector& y) {
  if (y.size() != cov.total_size())
    throw std::invalid_argument("log_marginal_joint: expected " +
                                std::to_string(cov.total_size()) + " observations, got " +
                                std::to_string(y.size()));
  const Eigen::LLT<Matrix>& llt = cov.factor();
  const Vector gamma = llt.solve(y);
  double log_det = 0.0;
  for (Index i = 0; i < y.size(); ++i)
    log_det += std::log(llt.matrixL()(i, i));
  return -0.5 * y.dot(gamma) - log_det -
         0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
}

/// gamma = K_y^-1 y and the "information" matrix gamma gamma^T - K_y^-1 that
/// every marginal-likelihood derivative contracts against.
struct JointDerivativeState {
  double value = 0.0;  // log marginal likelihood
  Vector gamma;
  Matrix information;
};

inline JointDerivativeState joint_derivative_state(const StructuredCovariance& cov,
                                                   const Vector& y) {
  if (y.size() != cov.total_size())
    throw std::invalid_argument("joint_derivative_state: expected " +
                                std::to_string(cov.total_size()) + " observations, got " +
                                std::to_string(y.size()));
  const Eigen::LLT<Matrix>& llt = cov.factor();
  JointDerivativeState state;
  state.gamma = llt.solve(y);
  double log_det = 0.0;
  for (Index i = 0; i < y.size(); ++i)
    log_det += std::log(llt.matrixL()(i, i));
  state.value = -0.5 * y.dot(state.gamma) - log_det -
                0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
  state.information = llt.solve(Matrix::Identity(y.size(), y.size()));
  state.information = -state.information;
  state.information.selfadjointView<Eigen::Lower>().rankUpdate(state.gamma);
  state.information.triangularView<Eigen::StrictlyUpper>() =
      state.information.transpose();
  return state;
}

/// D x D matrix of block traces C[a,b] = tr(M_ab G) where M_ab is the (a,b)
/// block of `information` and G is a symmetric N x N matrix.  This is the
/// contraction behind every Kronecker-structured gradient here.
inline Matrix block_trace_products(const Matrix& information, const Matrix& g, Index tasks) {
  const Index n = g.rows();
  Matrix c(tasks, tasks);
  for (Index a = 0; a < tasks; ++a) {
    for (Index b = 0; b <= a; ++b) {
      const double value = information.block(a * n, b * n, n, n).cwiseProduct(g).sum();
      c(a, b) = value;
      c(b, a) = value;
    }
  }
  return c;
}

/// Gradient of log_marginal_joint with respect to every weight entry, in the
/// same order as WeightSet::flatten().  For term q with block-trace matrix
/// C_q the gradient of column j is C_q * w_q^j; no Kronecker derivative is
/// ever materialized.
inline Vector weight_grad(const StructuredCovariance& cov, const Vector& y) {
  const JointDerivativeState state = joint_derivative_state(cov, y);
  const Index tasks = cov.task_count();
  Vector grad(cov.weights().size());
  Index offset = 0;
  for (Index q = 0; q < cov.weights().term_count(); ++q) {
    const Matrix c =
        block_trace_products(state.information, cov.grams()[static_cast<std::size_t>(q)], tasks);
    const Matrix g = c * cov.weights().terms[static_cast<std::size_t>(q)];
    grad.segment(offset, g.size()) = Eigen::Map<const Vector>(g.data(), g.size());
    offset += g.size();
  }
  return grad;
}

/// Cross covariance between M prediction points and the N training points:
/// blocks (a,b) = sum_q B_q(a,b) Kq_cross with Kq_cross of shape M x N.
/// No noise term (predictions target the latent functions).
inline Matrix cross_cov(const WeightSet& weights, const std::vector<Matrix>& cross_grams) {
  weights.validate();
  if (static_cast<Index>(cross_grams.size()) != weights.term_count())
    throw std::invalid_argument("cross_cov: " + std::to_string(cross_grams.size()) +
                                " cross Gram matrices for " +
                                std::to_string(weights.term_count()) + " weight terms");
  const Index m = cross_grams.front().rows();
  const Index n = cross_grams.front().cols();
  for (const Matrix& k : cross_grams)
    if (k.rows() != m || k.cols() != n)
      throw std::invalid_argument("cross_cov: inconsistent cross Gram shapes");
  const Index tasks = weights.task_count();
  Matrix out = Matrix::Zero(tasks * m, tasks * n);
  for (Index q = 0; q < weights.term_count(); ++q) {
    const Matrix b = weights.coregionalization(q);
    const Matrix& k = cross_grams[static_cast<std::size_t>(q)];
    for (Index a = 0; a < tasks; ++a)
      for (Index c = 0; c < tasks; ++c)
        if (b(a, c) != 0.0) out.block(a * m, c * n, m, n) += b(a, c) * k;
  }
  return out;
}

}  // namespace emgpr
