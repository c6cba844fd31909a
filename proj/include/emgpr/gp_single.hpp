// Single-output Gaussian process regression with zero mean and a unit-
// amplitude stationary kernel: exact marginal likelihood, its gradient, and
// maximum-likelihood fitting of (lengthscales, noise).
#pragma once

#include "emgpr/kernels.hpp"
#include "emgpr/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

namespace emgpr {

/// Hyperparameters of one latent process: the kernel lengthscale(s) and the
/// standard deviation of the i.i.d. observation noise.
struct LatentProcessParams {
  KernelSpec kernel;
  double noise_std = std::sqrt(0.02);

  /// Standard initialization: unit lengthscale(s), noise variance 0.02.
  static LatentProcessParams default_init(KernelKind kind = KernelKind::SquaredExponential,
                                          Index input_dim = 1) {
    LatentProcessParams params;
    params.kernel = kind == KernelKind::SquaredExponential
                        ? KernelSpec::se(1.0)
                        : KernelSpec::ard(Vector::Ones(input_dim));
    params.noise_std = std::sqrt(0.02);
    return params;
  }

  void validate(Index input_dim) const {
    kernel.validate(input_dim);
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
      throw std::invalid_argument("LatentProcessParams: noise_std must be finite and >= 0, got " +
                                  std::to_string(noise_std));
  }
};

struct GpFitConfig {
  int max_iterations = 120;
  double grad_tol = 1e-5;
  double ftol_rel = 1e-9;
  bool log_space = true;      // optimize log(lengthscale), log(noise_std)
  double noise_floor = 1e-6;  // lower bound applied to the fitted noise_std
  double jitter = 1e-10;      // factorization aid, never part of the model

  OptimizerConfig optimizer() const {
    OptimizerConfig config;
    config.max_iterations = max_iterations;
    config.grad_tol = grad_tol;
    config.ftol_rel = ftol_rel;
    return config;
  }
};

namespace detail {

/// Caches the per-lengthscale squared-distance matrices for one input set so
/// repeated likelihood evaluations only pay for exp().
struct SqdistCache {
  std::vector<Matrix> per_param;  // one matrix for SE, one per dimension for ARD

  SqdistCache(const KernelSpec& spec, const Matrix& X) {
    const Index n = X.rows();
    if (spec.kind == KernelKind::SquaredExponential) {
      Matrix total = Matrix::Zero(n, n);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < i; ++j) {
          const double sq = (X.row(i) - X.row(j)).squaredNorm();
          total(i, j) = sq;
          total(j, i) = sq;
        }
      per_param.push_back(std::move(total));
    } else {
      for (Index d = 0; d < X.cols(); ++d) {
        Matrix part = Matrix::Zero(n, n);
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < i; ++j) {
            const double diff = X(i, d) - X(j, d);
            part(i, j) = diff * diff;
            part(j, i) = diff * diff;
          }
        per_param.push_back(std::move(part));
      }
    }
  }

  /// K(alpha) with a unit diagonal, exactly symmetric.
  Matrix gram(const Vector& lengthscales) const {
    Matrix scaled = Matrix::Zero(per_param[0].rows(), per_param[0].cols());
    for (std::size_t i = 0; i < per_param.size(); ++i) {
      const double alpha = lengthscales[static_cast<Index>(i)];
      scaled += per_param[i] / (2.0 * alpha * alpha);
    }
    return (-scaled).array().exp();
  }
};

inline double log_marginal_from_llt(const Eigen::LLT<Matrix>& llt, const Vector& y,
                                    const Vector& gamma) {
  const double n = static_cast<double>(y.size());
  double log_det = 0.0;
  for (Index i = 0; i < y.size(); ++i)
    log_det += std::log(llt.matrixL()(i, i));
  return -0.5 * y.dot(gamma) - log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace detail

/// Exact log marginal likelihood log p(y | X, params) of the noisy process
/// (kernel Gram plus noise_std^2 on the diagonal).
inline double log_marginal(const LatentProcessParams& params, const Matrix& X, const Vector& y,
                           double jitter = 1e-10) {
  if (X.rows() != y.size())
    throw std::invalid_argument("log_marginal: X has " + std::to_string(X.rows()) +
                                " rows but y has " + std::to_string(y.size()) + " entries");
  params.validate(X.cols());
  Matrix K = gram(params.kernel, X).values;
  K.diagonal().array() += params.noise_std * params.noise_std;
  const Eigen::LLT<Matrix> llt = robust_llt(K, jitter, "log_marginal");
  const Vector gamma = llt.solve(y);
  return detail::log_marginal_from_llt(llt, y, gamma);
}

/// Gradient of log_marginal with respect to (lengthscales..., noise_std), in
/// that order and in the raw (non-log) parameterization.  Uses the trace
/// identity d/dtheta = 0.5 tr((gamma gamma^T - K^-1) dK/dtheta) with
/// gamma = K^-1 y.
inline Vector log_marginal_grad(const LatentProcessParams& params, const Matrix& X,
                                const Vector& y, double jitter = 1e-10) {
  if (X.rows() != y.size())
    throw std::invalid_argument("log_marginal_grad: X/y size mismatch");
  params.validate(X.cols());
  const detail::SqdistCache cache(params.kernel, X);
  const Matrix K = cache.gram(params.kernel.lengthscales);
  Matrix noisy = K;
  noisy.diagonal().array() += params.noise_std * params.noise_std;
  const Eigen::LLT<Matrix> llt = robust_llt(noisy, jitter, "log_marginal_grad");
  const Vector gamma = llt.solve(y);
  const Matrix inv = llt.solve(Matrix::Identity(X.rows(), X.rows()));

  Vector grad(params.kernel.param_count() + 1);
  for (Index p = 0; p < params.kernel.param_count(); ++p) {
    const double alpha = params.kernel.lengthscales[p];
    // dK/dalpha_p = K .* sqdist_p / alpha_p^3
    const Matrix dK = K.cwiseProduct(cache.per_param[static_cast<std::size_t>(p)]) /
                      (alpha * alpha * alpha);
    grad[p] = 0.5 * (gamma.dot(dK * gamma) - inv.cwiseProduct(dK).sum());
  }
  // dM/dsigma = 2 sigma I
  grad[params.kernel.param_count()] =
      params.noise_std * (gamma.squaredNorm() - inv.trace());
  return grad;
}

/// A fitted single-task model with the factorization caches needed for
/// prediction.
struct FittedTaskGP {
  LatentProcessParams params;
  Matrix X;
  Vector y;
  Matrix chol_lower;  // L with L L^T = K + noise_std^2 I (possibly jittered)
  Vector gamma;       // (K + noise_std^2 I)^-1 y
  double log_marginal_value = 0.0;
  int iterations = 0;
  StopReason stop_reason = StopReason::MaxIterations;
};

struct TaskPrediction {
  Vector mean;
  Vector variance;  // latent variance (no observation noise)
  int clamped = 0;  // entries clipped up to zero
};

/// Maximum-likelihood fit of one task.  By default the search runs in log
/// space, which keeps parameters positive without constraints; with
/// log_space=false a box-constrained search over the raw values is used.
/// The returned likelihood is never below the likelihood at `init`.
inline FittedTaskGP fit_task(const Matrix& X, const Vector& y, const LatentProcessParams& init,
                             const GpFitConfig& config = {}) {
  if (X.rows() != y.size())
    throw std::invalid_argument("fit_task: X has " + std::to_string(X.rows()) +
                                " rows but y has " + std::to_string(y.size()) + " entries");
  if (X.rows() == 0) throw std::invalid_argument("fit_task: empty training set");
  if (!y.allFinite() || !X.allFinite())
    throw std::invalid_argument("fit_task: training data contains non-finite values");
  init.validate(X.cols());

  const detail::SqdistCache cache(init.kernel, X);
  const Index n_ls = init.kernel.param_count();
  const Index dim = n_ls + 1;

  auto unpack = [&](const Vector& theta) {
    LatentProcessParams params = init;
    for (Index i = 0; i < n_ls; ++i)
      params.kernel.lengthscales[i] = config.log_space ? std::exp(theta[i]) : theta[i];
    params.noise_std = config.log_space ? std::exp(theta[n_ls]) : theta[n_ls];
    return params;
  };

  Objective objective = [&](const Vector& theta, Vector& grad) -> double {
    const LatentProcessParams params = unpack(theta);
    const Matrix K = cache.gram(params.kernel.lengthscales);
    Matrix noisy = K;
    noisy.diagonal().array() += params.noise_std * params.noise_std;
    Eigen::LLT<Matrix> llt(noisy);
    if (llt.info() != Eigen::Success) {
      noisy.diagonal().array() += config.jitter;
      llt.compute(noisy);
      if (llt.info() != Eigen::Success) {
        // Signal the line search to back off.
        grad.setZero(dim);
        return -std::numeric_limits<double>::infinity();
      }
    }
    const Vector gamma = llt.solve(y);
    const Matrix inv = llt.solve(Matrix::Identity(X.rows(), X.rows()));
    grad.resize(dim);
    for (Index p = 0; p < n_ls; ++p) {
      const double alpha = params.kernel.lengthscales[p];
      const Matrix dK = K.cwiseProduct(cache.per_param[static_cast<std::size_t>(p)]) /
                        (alpha * alpha * alpha);
      grad[p] = 0.5 * (gamma.dot(dK * gamma) - inv.cwiseProduct(dK).sum());
      if (config.log_space) grad[p] *= alpha;
    }
    grad[n_ls] = params.noise_std * (gamma.squaredNorm() - inv.trace());
    if (config.log_space) grad[n_ls] *= params.noise_std;
    return detail::log_marginal_from_llt(llt, y, gamma);
  };

  Vector theta0(dim);
  for (Index i = 0; i < n_ls; ++i)
    theta0[i] = config.log_space ? std::log(init.kernel.lengthscales[i])
                                 : init.kernel.lengthscales[i];
  const double sigma0 = std::max(init.noise_std, config.noise_floor);
  theta0[n_ls] = config.log_space ? std::log(sigma0) : sigma0;

  OptimizeResult opt;
  if (config.log_space) {
    opt = maximize(objective, theta0, config.optimizer());
  } else {
    Vector lower = Vector::Constant(dim, 1e-8);
    lower[n_ls] = config.noise_floor;
    opt = maximize(objective, theta0, config.optimizer(), lower);
  }

  FittedTaskGP model;
  model.params = unpack(opt.x);
  model.params.noise_std = std::max(model.params.noise_std, config.noise_floor);
  model.iterations = opt.iterations;
  model.stop_reason = opt.reason;
  model.X = X;
  model.y = y;

  // The noise floor can nudge the optimum; keep whichever of (floored
  // optimum, initial point) scores higher so the fit never regresses.
  double fitted_value = log_marginal(model.params, X, y, config.jitter);
  LatentProcessParams init_floored = init;
  init_floored.noise_std = sigma0;
  const double init_value = log_marginal(init_floored, X, y, config.jitter);
  if (init_value > fitted_value) {
    model.params = init_floored;
    fitted_value = init_value;
  }
  model.log_marginal_value = fitted_value;

  Matrix K = gram(model.params.kernel, X).values;
  K.diagonal().array() += model.params.noise_std * model.params.noise_std;
  const Eigen::LLT<Matrix> llt = robust_llt(K, config.jitter, "fit_task");
  model.chol_lower = llt.matrixL();
  model.gamma = llt.solve(y);
  return model;
}

/// Posterior mean and latent variance at new inputs.  Negative variances from
/// round-off are clamped to zero and counted.
inline TaskPrediction predict_task(const FittedTaskGP& model, const Matrix& Xstar) {
  if (Xstar.cols() != model.X.cols())
    throw std::invalid_argument("predict_task: expected " + std::to_string(model.X.cols()) +
                                " input dimensions, got " + std::to_string(Xstar.cols()));
  TaskPrediction out;
  const Index m = Xstar.rows();
  if (m == 0) return out;
  const Matrix kstar = gram(model.params.kernel, Xstar, model.X).values;  // m x n
  out.mean = kstar * model.gamma;
  const Matrix v = model.chol_lower.triangularView<Eigen::Lower>().solve(kstar.transpose());
  out.variance.resize(m);
  for (Index i = 0; i < m; ++i) {
    double var = 1.0 - v.col(i).squaredNorm();
    if (var < 0.0) {
      ++out.clamped;
      var = 0.0;
    }
    out.variance[i] = var;
  }
  if (out.clamped > 0)
    warn("predict_task: clamped " + std::to_string(out.clamped) +
         " negative predictive variances to zero");
  return out;
}

}  // namespace emgpr
