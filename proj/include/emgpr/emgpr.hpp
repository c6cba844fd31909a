// Multi-task Gaussian process regression over a sum-of-Kronecker-products
// covariance.  Learning is split in two steps: (1) independent per-task
// maximum-likelihood fits of the latent kernels and noise levels, and (2) a
// joint maximum-likelihood fit of the coregionalization weight vectors with
// the step-1 parameters frozen.  Delta weights recover independent GPs; a
// single shared kernel with a D x R1 weight matrix recovers the classic
// intrinsic coregionalization model.
#pragma once

#include "emgpr/gp_single.hpp"
#include "emgpr/structured_cov.hpp"

#include <optional>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

namespace emgpr {

struct EmgprConfig {
  GpFitConfig task_fit;  // step 1 (per-task) settings
  int step2_max_iterations = 120;
  double step2_grad_tol = 1e-5;
  double step2_ftol_rel = 1e-9;
  bool skip_step2 = false;  // true -> no-transfer model (delta weights)
  Index rank = 1;           // weight vectors per coregionalization term
  unsigned threads = 0;     // parallel step-1 fits; 0 = hardware concurrency
  double jitter = 1e-10;
  std::uint64_t seed = 0;  // only used where an initialization must be random

  OptimizerConfig step2_optimizer() const {
    OptimizerConfig config;
    config.max_iterations = step2_max_iterations;
    config.grad_tol = step2_grad_tol;
    config.ftol_rel = step2_ftol_rel;
    return config;
  }
};

struct MultiTaskPrediction {
  Matrix mean;      // M x D
  Matrix variance;  // M x D, latent unless observation noise was requested
  int clamped = 0;
};

/// Per-task conditioning data for heterotopic prediction; a task may have an
/// empty observation set.
struct TaskObservations {
  Matrix X;
  Vector y;
};

/// A fitted multi-task model.  `latent_kernels` holds the Q latent
/// covariances (Q == D after the two-step fit, Q == 1 for ICM) and `weights`
/// the Q coregionalization terms.  Call finalize() after assembling the
/// fields by hand; the fit functions do it for you.
struct EmgprModel {
  std::vector<KernelSpec> latent_kernels;
  Vector noise_std;  // one per task
  WeightSet weights;
  Matrix X;  // N x P training inputs
  Matrix Y;  // N x D training targets
  std::vector<LatentProcessParams> task_params;  // step-1 output when applicable
  int fit_iterations = 0;
  StopReason fit_stop = StopReason::MaxIterations;

  std::optional<StructuredCovariance> covariance;
  Vector cov_solve;  // K_y^-1 vec(Y), task-major
  double joint_log_marginal = 0.0;

  Index task_count() const { return Y.cols(); }
  bool ready() const { return covariance.has_value(); }

  /// Assembles the joint covariance and the solve cache from the model
  /// fields.  Validates shape consistency.
  void finalize(double jitter = 1e-10) {
    if (X.rows() != Y.rows())
      throw std::invalid_argument("EmgprModel: X has " + std::to_string(X.rows()) +
                                  " rows but Y has " + std::to_string(Y.rows()));
    if (noise_std.size() != Y.cols())
      throw std::invalid_argument("EmgprModel: expected " + std::to_string(Y.cols()) +
                                  " noise levels, got " + std::to_string(noise_std.size()));
    if (static_cast<Index>(latent_kernels.size()) != weights.term_count())
      throw std::invalid_argument("EmgprModel: " + std::to_string(latent_kernels.size()) +
                                  " latent kernels for " + std::to_string(weights.term_count()) +
                                  " weight terms");
    if (weights.task_count() != Y.cols())
      throw std::invalid_argument("EmgprModel: weights cover " +
                                  std::to_string(weights.task_count()) + " tasks, data has " +
                                  std::to_string(Y.cols()));
    std::vector<Matrix> grams;
    grams.reserve(latent_kernels.size());
    for (const KernelSpec& spec : latent_kernels) grams.push_back(gram(spec, X).values);
    covariance.emplace(weights, std::move(grams), noise_std, jitter);
    const Vector y = flatten_tasks(Y);
    cov_solve = covariance->factor().solve(y);
    joint_log_marginal = log_marginal_joint(*covariance, y);
  }
};

/// Step 1: independent maximum-likelihood fits of every task, optionally in
/// parallel.  Per-task failures are collected and reported together with
/// their task indices; any failure aborts the whole fit.
inline std::vector<LatentProcessParams> fit_step1(const Matrix& X, const Matrix& Y,
                                                  const std::vector<LatentProcessParams>& inits,
                                                  const GpFitConfig& config = {},
                                                  unsigned threads = 0) {
  const Index tasks = Y.cols();
  if (X.rows() != Y.rows())
    throw std::invalid_argument("fit_step1: X has " + std::to_string(X.rows()) +
                                " rows but Y has " + std::to_string(Y.rows()));
  if (tasks == 0) throw std::invalid_argument("fit_step1: no tasks");
  if (static_cast<Index>(inits.size()) != tasks)
    throw std::invalid_argument("fit_step1: expected " + std::to_string(tasks) +
                                " initializations, got " + std::to_string(inits.size()));

  std::vector<LatentProcessParams> fitted(static_cast<std::size_t>(tasks));
  std::vector<std::string> failures(static_cast<std::size_t>(tasks));
  parallel_for(static_cast<int>(tasks), threads, [&](int d) {
    try {
      const FittedTaskGP fit =
          fit_task(X, Y.col(d), inits[static_cast<std::size_t>(d)], config);
      fitted[static_cast<std::size_t>(d)] = fit.params;
    } catch (const std::exception& error) {
      failures[static_cast<std::size_t>(d)] = error.what();
    }
  });

  std::ostringstream report;
  bool failed = false;
  for (Index d = 0; d < tasks; ++d) {
    if (failures[static_cast<std::size_t>(d)].empty()) continue;
    report << (failed ? "; " : "") << "task " << d << ": " << failures[static_cast<std::size_t>(d)];
    failed = true;
  }
  if (failed) throw numerical_error("fit_step1 failed for " + report.str());
  return fitted;
}

/// Convenience overload: the same initialization for every task.
inline std::vector<LatentProcessParams> fit_step1(const Matrix& X, const Matrix& Y,
                                                  const LatentProcessParams& init,
                                                  const GpFitConfig& config = {},
                                                  unsigned threads = 0) {
  return fit_step1(X, Y, std::vector<LatentProcessParams>(static_cast<std::size_t>(Y.cols()), init),
                   config, threads);
}

/// Step 2: joint maximum-likelihood fit of the weight vectors with the
/// step-1 kernels and noise levels held fixed.  Passing no initial weights
/// starts from the delta (no-transfer) configuration, which is only defined
/// for rank 1.  The returned weights never score below the initialization.
inline WeightSet fit_step2(const Matrix& X, const Matrix& Y,
                           const std::vector<LatentProcessParams>& task_params,
                           const std::optional<WeightSet>& init_weights = std::nullopt,
                           const EmgprConfig& config = {}, int* iterations_out = nullptr,
                           StopReason* stop_out = nullptr) {
  const Index tasks = Y.cols();
  if (X.rows() != Y.rows() || tasks == 0)
    throw std::invalid_argument("fit_step2: inconsistent or empty training data");
  if (static_cast<Index>(task_params.size()) != tasks)
    throw std::invalid_argument("fit_step2: expected " + std::to_string(tasks) +
                                " task parameter sets, got " + std::to_string(task_params.size()));

  WeightSet init;
  if (init_weights.has_value()) {
    init = *init_weights;
    init.validate();
    if (init.task_count() != tasks)
      throw std::invalid_argument("fit_step2: initial weights cover " +
                                  std::to_string(init.task_count()) + " tasks, data has " +
                                  std::to_string(tasks));
  } else {
    if (config.rank != 1)
      throw std::invalid_argument(
          "fit_step2: the default delta initialization is rank-1; pass explicit initial weights "
          "for rank " +
          std::to_string(config.rank));
    init = WeightSet::deltas(tasks);
  }
  const Index terms = init.term_count();
  const Index rank = init.rank();
  if (static_cast<Index>(task_params.size()) < terms)
    throw std::invalid_argument("fit_step2: more weight terms than latent kernels");

  std::vector<Matrix> grams;
  grams.reserve(static_cast<std::size_t>(terms));
  Vector noise(tasks);
  for (Index d = 0; d < tasks; ++d) {
    task_params[static_cast<std::size_t>(d)].validate(X.cols());
    noise[d] = task_params[static_cast<std::size_t>(d)].noise_std;
  }
  for (Index q = 0; q < terms; ++q)
    grams.push_back(gram(task_params[static_cast<std::size_t>(q)].kernel, X).values);

  const Vector y = flatten_tasks(Y);
  Objective objective = [&](const Vector& wflat, Vector& grad) -> double {
    const WeightSet w = WeightSet::unflatten(wflat, terms, tasks, rank);
    double value;
    try {
      const StructuredCovariance cov(w, grams, noise, config.jitter);
      const JointDerivativeState state = joint_derivative_state(cov, y);
      value = state.value;
      grad.resize(wflat.size());
      Index offset = 0;
      for (Index q = 0; q < terms; ++q) {
        const Matrix c = block_trace_products(state.information,
                                              grams[static_cast<std::size_t>(q)], tasks);
        const Matrix g = c * w.terms[static_cast<std::size_t>(q)];
        grad.segment(offset, g.size()) = Eigen::Map<const Vector>(g.data(), g.size());
        offset += g.size();
      }
    } catch (const numerical_error&) {
      grad = Vector::Zero(wflat.size());
      value = -std::numeric_limits<double>::infinity();
    }
    return value;
  };

  const OptimizeResult opt = maximize(objective, init.flatten(), config.step2_optimizer());
  if (iterations_out != nullptr) *iterations_out = opt.iterations;
  if (stop_out != nullptr) *stop_out = opt.reason;
  return WeightSet::unflatten(opt.x, terms, tasks, rank);
}

/// Builds a model from already-fitted per-task parameters: runs step 2 only
/// (or keeps delta weights with skip_step2) and finalizes.
inline EmgprModel fit_from_step1(const Matrix& X, const Matrix& Y,
                                 const std::vector<LatentProcessParams>& task_params,
                                 const EmgprConfig& config = {}) {
  const Index tasks = Y.cols();
  if (tasks == 0) throw std::invalid_argument("fit_from_step1: no tasks");
  EmgprModel model;
  model.task_params = task_params;
  model.X = X;
  model.Y = Y;
  model.noise_std.resize(tasks);
  for (Index d = 0; d < tasks; ++d)
    model.noise_std[d] = model.task_params[static_cast<std::size_t>(d)].noise_std;
  model.latent_kernels.clear();
  for (Index d = 0; d < tasks; ++d)
    model.latent_kernels.push_back(model.task_params[static_cast<std::size_t>(d)].kernel);

  if (config.skip_step2) {
    model.weights = WeightSet::deltas(tasks);
  } else {
    model.weights = fit_step2(X, Y, model.task_params, std::nullopt, config,
                              &model.fit_iterations, &model.fit_stop);
  }
  model.finalize(config.jitter);
  return model;
}

/// Full two-step fit.  With skip_step2 the weights stay at the delta
/// configuration and the model is exactly a collection of independent GPs.
inline EmgprModel fit(const Matrix& X, const Matrix& Y, const EmgprConfig& config = {},
                      const std::optional<std::vector<LatentProcessParams>>& inits = std::nullopt) {
  const Index tasks = Y.cols();
  if (tasks == 0) throw std::invalid_argument("fit: no tasks");
  std::vector<LatentProcessParams> init_params;
  if (inits.has_value()) {
    init_params = *inits;
  } else {
    init_params.assign(static_cast<std::size_t>(tasks), LatentProcessParams::default_init());
  }
  return fit_from_step1(X, Y, fit_step1(X, Y, init_params, config.task_fit, config.threads),
                        config);
}

/// No-transfer baseline: step 1 only, delta weights.
inline EmgprModel fit_no_transfer(const Matrix& X, const Matrix& Y, EmgprConfig config = {}) {
  config.skip_step2 = true;
  return fit(X, Y, config);
}

/// Intrinsic coregionalization model: a single shared kernel with a D x R1
/// weight matrix, all parameters (lengthscale, weights, noise) learned
/// jointly.  The weight matrix is initialized from seeded Gaussian draws --
/// the zero and delta configurations are stationary points of this
/// objective, so a deterministic-but-random start is required.  `init` seeds
/// the shared lengthscale and the per-task noise levels.
inline EmgprModel fit_icm(const Matrix& X, const Matrix& Y, Index r1,
                          const EmgprConfig& config = {},
                          const std::optional<LatentProcessParams>& init = std::nullopt) {
  const Index tasks = Y.cols();
  const Index n = X.rows();
  if (n != Y.rows() || tasks == 0)
    throw std::invalid_argument("fit_icm: inconsistent or empty training data");
  if (r1 < 1 || r1 > tasks)
    throw std::invalid_argument("fit_icm: rank must lie in [1, " + std::to_string(tasks) +
                                "], got " + std::to_string(r1));
  if (!X.allFinite() || !Y.allFinite())
    throw std::invalid_argument("fit_icm: training data contains non-finite values");

  const detail::SqdistCache cache(KernelSpec::se(1.0), X);
  const Vector y = flatten_tasks(Y);
  const Index weight_count = tasks * r1;
  const Index dim = 1 + weight_count + tasks;  // log alpha, W, log sigma

  // theta layout: [log alpha, vec(W), log sigma_1..log sigma_D]
  auto unpack = [&](const Vector& theta, double& alpha, Matrix& w, Vector& sigma) {
    alpha = std::exp(theta[0]);
    w = Eigen::Map<const Matrix>(theta.data() + 1, tasks, r1);
    sigma = theta.segment(1 + weight_count, tasks).array().exp();
  };

  Objective objective = [&](const Vector& theta, Vector& grad) -> double {
    double alpha;
    Matrix w;
    Vector sigma;
    unpack(theta, alpha, w, sigma);
    const Matrix k = cache.gram(Vector::Constant(1, alpha));
    double value;
    grad.resize(dim);
    try {
      WeightSet ws;
      ws.terms = {w};
      const StructuredCovariance cov(ws, {k}, sigma, config.jitter);
      const JointDerivativeState state = joint_derivative_state(cov, y);
      value = state.value;

      const Matrix b = ws.coregionalization(0);
      const Matrix dk = k.cwiseProduct(cache.per_param[0]) / (alpha * alpha * alpha);
      const Matrix c_alpha = block_trace_products(state.information, dk, tasks);
      grad[0] = 0.5 * b.cwiseProduct(c_alpha).sum() * alpha;  // log-space

      const Matrix c_w = block_trace_products(state.information, k, tasks);
      const Matrix gw = c_w * w;
      grad.segment(1, weight_count) = Eigen::Map<const Vector>(gw.data(), weight_count);

      for (Index d = 0; d < tasks; ++d) {
        const double trace = state.information.block(d * n, d * n, n, n).trace();
        grad[1 + weight_count + d] = sigma[d] * trace * sigma[d];  // log-space
      }
    } catch (const numerical_error&) {
      grad.setZero(dim);
      value = -std::numeric_limits<double>::infinity();
    }
    return value;
  };

  const LatentProcessParams start = init.value_or(LatentProcessParams::default_init());
  if (start.kernel.kind != KernelKind::SquaredExponential || start.kernel.lengthscales.size() != 1)
    throw std::invalid_argument("fit_icm: init must carry a single shared lengthscale");
  Vector theta0(dim);
  theta0[0] = std::log(start.kernel.lengthscales[0]);
  std::mt19937_64 rng(derive_seed(config.seed, 0x1c3u));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(r1)));
  for (Index i = 0; i < weight_count; ++i) theta0[1 + i] = normal(rng);
  theta0.segment(1 + weight_count, tasks).array() = std::log(start.noise_std);

  OptimizerConfig opt_config = config.step2_optimizer();
  const OptimizeResult opt = maximize(objective, theta0, opt_config);

  EmgprModel model;
  double alpha;
  Matrix w;
  Vector sigma;
  unpack(opt.x, alpha, w, sigma);
  model.latent_kernels = {KernelSpec::se(alpha)};
  model.weights.terms = {w};
  model.noise_std = sigma.cwiseMax(config.task_fit.noise_floor);
  model.X = X;
  model.Y = Y;
  model.fit_iterations = opt.iterations;
  model.fit_stop = opt.reason;
  model.finalize(config.jitter);
  return model;
}

namespace detail {

inline MultiTaskPrediction predict_from_cross(const EmgprModel& model, const Matrix& kc,
                                              const Eigen::LLT<Matrix>& factor,
                                              const Vector& solve, Index m,
                                              bool observation_noise) {
  const Index tasks = model.task_count();
  MultiTaskPrediction out;
  const Vector mean = kc * solve;
  out.mean = unflatten_tasks(mean, m, tasks);

  // prior variance per task: sum_q B_q(d,d) (unit-amplitude kernels)
  Vector prior = Vector::Zero(tasks);
  for (Index q = 0; q < model.weights.term_count(); ++q)
    prior += model.weights.terms[static_cast<std::size_t>(q)].rowwise().squaredNorm();
  if (observation_noise)
    prior += model.noise_std.cwiseProduct(model.noise_std);

  const Matrix v = factor.solve(kc.transpose());
  out.variance.resize(m, tasks);
  for (Index d = 0; d < tasks; ++d) {
    for (Index i = 0; i < m; ++i) {
      const Index row = d * m + i;
      double var = prior[d] - kc.row(row).dot(v.col(row));
      if (var < 0.0) {
        ++out.clamped;
        var = 0.0;
      }
      out.variance(i, d) = var;
    }
  }
  if (out.clamped > 0)
    warn("predict: clamped " + std::to_string(out.clamped) +
         " negative predictive variances to zero");
  return out;
}

}  // namespace detail

/// Joint posterior over all tasks at new inputs (isotopic prediction: every
/// task conditions on the full training block).
inline MultiTaskPrediction predict(const EmgprModel& model, const Matrix& Xstar,
                                   bool observation_noise = false) {
  if (!model.ready()) throw std::logic_error("predict: model not finalized");
  if (Xstar.cols() != model.X.cols())
    throw std::invalid_argument("predict: expected " + std::to_string(model.X.cols()) +
                                " input dimensions, got " + std::to_string(Xstar.cols()));
  const Index m = Xstar.rows();
  MultiTaskPrediction out;
  if (m == 0) {
    out.mean.resize(0, model.task_count());
    out.variance.resize(0, model.task_count());
    return out;
  }
  std::vector<Matrix> crosses;
  crosses.reserve(model.latent_kernels.size());
  for (const KernelSpec& spec : model.latent_kernels)
    crosses.push_back(gram(spec, Xstar, model.X).values);
  const Matrix kc = cross_cov(model.weights, crosses);
  return detail::predict_from_cross(model, kc, model.covariance->factor(), model.cov_solve, m,
                                    observation_noise);
}

/// Heterotopic prediction: every task conditions on its own observation set
/// (possibly empty, possibly different sites per task).  The model's fitted
/// parameters are reused; only the conditioning data changes.
inline MultiTaskPrediction predict_conditioned(const EmgprModel& model,
                                               const std::vector<TaskObservations>& observations,
                                               const Matrix& Xstar,
                                               bool observation_noise = false) {
  if (!model.ready()) throw std::logic_error("predict_conditioned: model not finalized");
  const Index tasks = model.task_count();
  if (static_cast<Index>(observations.size()) != tasks)
    throw std::invalid_argument("predict_conditioned: expected " + std::to_string(tasks) +
                                " observation sets, got " + std::to_string(observations.size()));
  const Index p = model.X.cols();
  if (Xstar.cols() != p)
    throw std::invalid_argument("predict_conditioned: input dimension mismatch");

  std::vector<Index> offsets(static_cast<std::size_t>(tasks) + 1, 0);
  for (Index d = 0; d < tasks; ++d) {
    const TaskObservations& obs = observations[static_cast<std::size_t>(d)];
    if (obs.X.rows() != obs.y.size())
      throw std::invalid_argument("predict_conditioned: task " + std::to_string(d) +
                                  " has " + std::to_string(obs.X.rows()) + " inputs for " +
                                  std::to_string(obs.y.size()) + " observations");
    if (obs.X.rows() > 0 && obs.X.cols() != p)
      throw std::invalid_argument("predict_conditioned: task " + std::to_string(d) +
                                  " input dimension mismatch");
    offsets[static_cast<std::size_t>(d) + 1] = offsets[static_cast<std::size_t>(d)] + obs.X.rows();
  }
  const Index total = offsets[static_cast<std::size_t>(tasks)];
  if (total == 0)
    throw std::invalid_argument("predict_conditioned: all observation sets are empty");

  const Index terms = model.weights.term_count();
  std::vector<Matrix> b(static_cast<std::size_t>(terms));
  for (Index q = 0; q < terms; ++q) b[static_cast<std::size_t>(q)] = model.weights.coregionalization(q);

  // joint covariance of the jagged observation vector
  Matrix k_obs = Matrix::Zero(total, total);
  Vector y_obs(total);
  for (Index a = 0; a < tasks; ++a) {
    const TaskObservations& obs_a = observations[static_cast<std::size_t>(a)];
    if (obs_a.X.rows() == 0) continue;
    y_obs.segment(offsets[static_cast<std::size_t>(a)], obs_a.X.rows()) = obs_a.y;
    for (Index c = a; c < tasks; ++c) {
      const TaskObservations& obs_c = observations[static_cast<std::size_t>(c)];
      if (obs_c.X.rows() == 0) continue;
      Matrix block = Matrix::Zero(obs_a.X.rows(), obs_c.X.rows());
      for (Index q = 0; q < terms; ++q) {
        const double weight = b[static_cast<std::size_t>(q)](a, c);
        if (weight == 0.0) continue;
        block += weight *
                 gram(model.latent_kernels[static_cast<std::size_t>(q)], obs_a.X, obs_c.X).values;
      }
      k_obs.block(offsets[static_cast<std::size_t>(a)], offsets[static_cast<std::size_t>(c)],
                  obs_a.X.rows(), obs_c.X.rows()) = block;
      if (c != a)
        k_obs.block(offsets[static_cast<std::size_t>(c)], offsets[static_cast<std::size_t>(a)],
                    obs_c.X.rows(), obs_a.X.rows()) = block.transpose();
    }
    k_obs.block(offsets[static_cast<std::size_t>(a)], offsets[static_cast<std::size_t>(a)],
                obs_a.X.rows(), obs_a.X.rows())
        .diagonal()
        .array() += model.noise_std[a] * model.noise_std[a];
  }

  const Eigen::LLT<Matrix> factor = robust_llt(k_obs, 1e-10, "predict_conditioned");
  const Vector solve = factor.solve(y_obs);

  const Index m = Xstar.rows();
  Matrix kc = Matrix::Zero(tasks * m, total);
  for (Index a = 0; a < tasks; ++a) {
    for (Index c = 0; c < tasks; ++c) {
      const TaskObservations& obs_c = observations[static_cast<std::size_t>(c)];
      if (obs_c.X.rows() == 0) continue;
      Matrix block = Matrix::Zero(m, obs_c.X.rows());
      for (Index q = 0; q < terms; ++q) {
        const double weight = b[static_cast<std::size_t>(q)](a, c);
        if (weight == 0.0) continue;
        block += weight *
                 gram(model.latent_kernels[static_cast<std::size_t>(q)], Xstar, obs_c.X).values;
      }
      kc.block(a * m, offsets[static_cast<std::size_t>(c)], m, obs_c.X.rows()) = block;
    }
  }
  return detail::predict_from_cross(model, kc, factor, solve, m, observation_noise);
}

}  // namespace emgpr
