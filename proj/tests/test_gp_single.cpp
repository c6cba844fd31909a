#include "emgpr/gp_single.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace emgpr;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Fixed five-point data set shared with the reference computations.
Matrix data_x() {
  Matrix x(5, 2);
  x << 0.953, -0.24, 0.846, -0.477, -0.362, -0.764, -0.516, -0.363, 0.928, -0.473;
  return x;
}

Vector data_y() {
  Vector y(5);
  y << -0.512, 1.324, -0.86, 0.519, -1.265;
  return y;
}

LatentProcessParams se_params(double alpha, double sigma) {
  LatentProcessParams p;
  p.kernel = KernelSpec::se(alpha);
  p.noise_std = sigma;
  return p;
}

/// Draws y ~ N(0, K(alpha) + sigma^2 I) deterministically.
Vector sample_gp(const Matrix& x, double alpha, double sigma, std::uint64_t seed) {
  Matrix k = gram(KernelSpec::se(alpha), x).values;
  k.diagonal().array() += sigma * sigma;
  const Eigen::LLT<Matrix> llt(k);
  return Matrix(llt.matrixL()) * test_support::normal_vector(x.rows(), seed);
}

}  // namespace

TEST_CASE("log_marginal matches the dense reference", "[gp_single]") {
  const double value = log_marginal(se_params(0.8, 0.3), data_x(), data_y());
  CHECK_THAT(value, WithinRel(-23.627784925858023, 1e-12));

  // independent dense route through an LU decomposition
  Matrix k = gram(KernelSpec::se(0.8), data_x()).values;
  k.diagonal().array() += 0.09;
  CHECK_THAT(value, WithinRel(test_support::dense_log_density(k, data_y()), 1e-12));

  // ARD variant
  LatentProcessParams ard;
  Vector ls(2);
  ls << 0.7, 1.3;
  ard.kernel = KernelSpec::ard(ls);
  ard.noise_std = 0.25;
  CHECK_THAT(log_marginal(ard, data_x(), data_y()), WithinRel(-32.02074984207384, 1e-12));
}

TEST_CASE("log_marginal of a single noise-free zero observation", "[gp_single]") {
  // K = [1], y = [0]: density collapses to -log sqrt(2 pi)
  Matrix x(1, 1);
  x << 0.4;
  Vector y(1);
  y << 0.0;
  CHECK_THAT(log_marginal(se_params(1.0, 0.0), x, y), WithinAbs(-0.9189385332046727, 1e-9));
}

TEST_CASE("log_marginal_grad matches central differences", "[gp_single]") {
  const Vector grad = log_marginal_grad(se_params(0.8, 0.3), data_x(), data_y());
  REQUIRE(grad.size() == 2);
  CHECK_THAT(grad[0], WithinRel(-6.641422880093728, 1e-6));
  CHECK_THAT(grad[1], WithinRel(118.02343803424264, 1e-6));

  LatentProcessParams ard;
  Vector ls(2);
  ls << 0.7, 1.3;
  ard.kernel = KernelSpec::ard(ls);
  ard.noise_std = 0.25;
  const Vector ard_grad = log_marginal_grad(ard, data_x(), data_y());
  REQUIRE(ard_grad.size() == 3);
  CHECK_THAT(ard_grad[0], WithinRel(-12.087998623400154, 1e-6));
  CHECK_THAT(ard_grad[1], WithinRel(-2.50295922299415, 1e-6));
  CHECK_THAT(ard_grad[2], WithinRel(199.01945965017376, 1e-6));
}

TEST_CASE("predict_task reproduces the dense posterior", "[gp_single]") {
  FittedTaskGP model;
  model.params = se_params(0.8, 0.3);
  model.X = data_x();
  model.y = data_y();
  Matrix k = gram(model.params.kernel, model.X).values;
  k.diagonal().array() += 0.09;
  const Eigen::LLT<Matrix> llt(k);
  model.chol_lower = llt.matrixL();
  model.gamma = llt.solve(model.y);

  Matrix xs(3, 2);
  xs << 0.25, -0.3, 0.9, 0.4, -1.2, 0.05;
  const TaskPrediction pred = predict_task(model, xs);
  REQUIRE(pred.mean.size() == 3);
  CHECK_THAT(pred.mean[0], WithinRel(0.45181385072214764, 1e-10));
  CHECK_THAT(pred.mean[1], WithinRel(-0.35383218869268124, 1e-10));
  CHECK_THAT(pred.mean[2], WithinRel(0.5867957198440414, 1e-10));
  CHECK_THAT(pred.variance[0], WithinRel(0.26426045749138316, 1e-9));
  CHECK_THAT(pred.variance[1], WithinRel(0.48119076901421387, 1e-9));
  CHECK_THAT(pred.variance[2], WithinRel(0.6105944372126537, 1e-9));
  CHECK(pred.clamped == 0);

  // far away from all data the prior is recovered
  Matrix far(1, 2);
  far << 50.0, 50.0;
  const TaskPrediction prior = predict_task(model, far);
  CHECK_THAT(prior.mean[0], WithinAbs(0.0, 1e-12));
  CHECK_THAT(prior.variance[0], WithinAbs(1.0, 1e-12));
}

TEST_CASE("fit_task improves the likelihood and lands at a stationary point", "[gp_single]") {
  Matrix x = test_support::uniform_matrix(60, 1, 321);
  const Vector y = sample_gp(x, 0.3, 0.1, 654);
  const LatentProcessParams init = LatentProcessParams::default_init();
  const double initial_value = log_marginal(init, x, y);

  const FittedTaskGP model = fit_task(x, y, init);
  CHECK(model.log_marginal_value >= initial_value);
  CHECK(model.params.noise_std >= 1e-6);

  // converged fit should be (near) stationary
  const Vector grad = log_marginal_grad(model.params, x, y);
  CHECK(grad.lpNorm<Eigen::Infinity>() < 1e-4);

  // hyperparameters in range of the generating values
  CHECK(model.params.kernel.lengthscales[0] > 0.15);
  CHECK(model.params.kernel.lengthscales[0] < 0.6);
  CHECK(model.params.noise_std > 0.02);
  CHECK(model.params.noise_std < 0.3);
}

TEST_CASE("fit_task with zero iterations returns the initialization", "[gp_single]") {
  GpFitConfig config;
  config.max_iterations = 0;
  const LatentProcessParams init = se_params(0.9, 0.2);
  const FittedTaskGP model = fit_task(data_x(), data_y(), init, config);
  CHECK(model.params.kernel.lengthscales[0] == 0.9);
  CHECK(model.params.noise_std == 0.2);
  CHECK(model.iterations == 0);
  CHECK_THAT(model.log_marginal_value, WithinRel(log_marginal(init, data_x(), data_y()), 1e-12));
}

TEST_CASE("fit_task raw-space search respects the noise floor", "[gp_single]") {
  GpFitConfig config;
  config.log_space = false;
  config.noise_floor = 0.05;
  Matrix x = test_support::uniform_matrix(40, 1, 11);
  const Vector y = sample_gp(x, 0.25, 0.01, 22);  // nearly noise-free draw
  const FittedTaskGP model = fit_task(x, y, LatentProcessParams::default_init(), config);
  CHECK(model.params.noise_std >= 0.05);
  CHECK(model.log_marginal_value >=
        log_marginal(se_params(1.0, std::max(std::sqrt(0.02), 0.05)), x, y) - 1e-9);
}

TEST_CASE("fit_task rejects malformed inputs", "[gp_single]") {
  CHECK_THROWS_AS(fit_task(data_x(), Vector::Zero(3), LatentProcessParams::default_init()),
                  std::invalid_argument);
  Vector bad = data_y();
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fit_task(data_x(), bad, LatentProcessParams::default_init()),
                  std::invalid_argument);
  CHECK_THROWS_AS(fit_task(Matrix(0, 2), Vector(0), LatentProcessParams::default_init()),
                  std::invalid_argument);
}

TEST_CASE("predict_task validates input dimensions", "[gp_single]") {
  FittedTaskGP model;
  model.params = se_params(0.8, 0.3);
  model.X = data_x();
  model.y = data_y();
  Matrix k = gram(model.params.kernel, model.X).values;
  k.diagonal().array() += 0.09;
  const Eigen::LLT<Matrix> llt(k);
  model.chol_lower = llt.matrixL();
  model.gamma = llt.solve(model.y);
  CHECK_THROWS_AS(predict_task(model, Matrix(2, 3)), std::invalid_argument);
}
