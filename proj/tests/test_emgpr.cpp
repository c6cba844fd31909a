#include "emgpr/emgpr.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace emgpr;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Matrix data_x4() {
  Matrix x(4, 2);
  x << -0.554, -0.656, 0.741, -0.88, 0.367, 0.342, 0.222, -0.88;
  return x;
}

Matrix data_y4() {
  Matrix y(4, 2);
  y << -1.157, 0.696, 0.351, -0.032, 0.013, -0.679, -0.621, 1.331;
  return y;
}

/// Two strongly correlated tasks observed at the same 1-D sites:
/// y1 = u + e1, y2 = 0.8 u + e2 for one latent draw u.
struct CoupledTasks {
  Matrix X;
  Matrix Y;
};

CoupledTasks coupled_tasks(Index n = 40, std::uint64_t seed = 99) {
  CoupledTasks data;
  data.X = test_support::uniform_matrix(n, 1, seed);
  Matrix k = gram(KernelSpec::se(0.3), data.X).values;
  k.diagonal().array() += 1e-10;
  const Eigen::LLT<Matrix> llt(k);
  const Vector u = Matrix(llt.matrixL()) * test_support::normal_vector(n, seed + 1);
  data.Y.resize(n, 2);
  data.Y.col(0) = u + 0.05 * test_support::normal_vector(n, seed + 2);
  data.Y.col(1) = 0.8 * u + 0.05 * test_support::normal_vector(n, seed + 3);
  return data;
}

}  // namespace

TEST_CASE("single-kernel joint derivatives match central differences", "[emgpr]") {
  // The identities used by the joint single-kernel objective, evaluated at a
  // frozen point and compared against an independent reference.
  const Matrix x = data_x4();
  Matrix w(2, 2);
  w << 0.8, -0.3, 0.5, 1.2;
  const double alpha = 0.9;
  Vector sigma(2);
  sigma << 0.35, 0.15;

  WeightSet ws;
  ws.terms = {w};
  const Matrix k = gram(KernelSpec::se(alpha), x).values;
  const StructuredCovariance cov(ws, {k}, sigma);
  const Vector y = flatten_tasks(data_y4());
  const JointDerivativeState state = joint_derivative_state(cov, y);
  CHECK_THAT(state.value, WithinRel(-10.46642543927178, 1e-12));

  // lengthscale gradient: 0.5 sum_ab B(a,b) tr(M_ab dK)
  const Matrix dk = gram_grad_lengthscale(KernelSpec::se(alpha), x, 0);
  const Matrix c_alpha = block_trace_products(state.information, dk, 2);
  const Matrix b = ws.coregionalization(0);
  CHECK_THAT(0.5 * b.cwiseProduct(c_alpha).sum(), WithinRel(-5.015970454991248, 1e-6));

  // weight gradient: C W, flattened column-major
  const Matrix gw = block_trace_products(state.information, k, 2) * w;
  CHECK_THAT(gw(0, 0), WithinRel(-1.6254283092820287, 1e-6));
  CHECK_THAT(gw(1, 0), WithinRel(-0.9603525725765394, 1e-6));
  CHECK_THAT(gw(0, 1), WithinRel(-1.6132776625710221, 1e-6));
  CHECK_THAT(gw(1, 1), WithinRel(1.251655067591173, 1e-6));

  // noise gradient: sigma_d tr(M_dd)
  const Index n = x.rows();
  CHECK_THAT(sigma[0] * state.information.block(0, 0, n, n).trace(),
             WithinRel(-1.0579454778891773, 1e-6));
  CHECK_THAT(sigma[1] * state.information.block(n, n, n, n).trace(),
             WithinRel(3.247131523664848, 1e-6));
}

TEST_CASE("fit_step1 matches independent per-task fits", "[emgpr]") {
  const CoupledTasks data = coupled_tasks();
  const std::vector<LatentProcessParams> fitted =
      fit_step1(data.X, data.Y, LatentProcessParams::default_init());
  REQUIRE(fitted.size() == 2);
  for (Index d = 0; d < 2; ++d) {
    const FittedTaskGP single =
        fit_task(data.X, data.Y.col(d), LatentProcessParams::default_init());
    CHECK(fitted[static_cast<std::size_t>(d)].kernel.lengthscales ==
          single.params.kernel.lengthscales);
    CHECK(fitted[static_cast<std::size_t>(d)].noise_std == single.params.noise_std);
  }
  // threads must not change results
  const std::vector<LatentProcessParams> threaded =
      fit_step1(data.X, data.Y, LatentProcessParams::default_init(), {}, 4);
  for (std::size_t d = 0; d < 2; ++d) {
    CHECK(threaded[d].kernel.lengthscales == fitted[d].kernel.lengthscales);
    CHECK(threaded[d].noise_std == fitted[d].noise_std);
  }
}

TEST_CASE("fit_step1 reports failing tasks by index", "[emgpr]") {
  CoupledTasks data = coupled_tasks(10);
  data.Y(3, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    fit_step1(data.X, data.Y, LatentProcessParams::default_init());
    FAIL("expected fit_step1 to throw");
  } catch (const numerical_error& error) {
    CHECK_THAT(error.what(), ContainsSubstring("task 1"));
  }
}

TEST_CASE("fit_step2 starts at deltas and improves the joint likelihood", "[emgpr]") {
  const CoupledTasks data = coupled_tasks();
  const std::vector<LatentProcessParams> params =
      fit_step1(data.X, data.Y, LatentProcessParams::default_init());

  // zero iterations: the delta initialization comes back untouched
  EmgprConfig frozen;
  frozen.step2_max_iterations = 0;
  const WeightSet untouched = fit_step2(data.X, data.Y, params, std::nullopt, frozen);
  const WeightSet deltas = WeightSet::deltas(2);
  for (std::size_t q = 0; q < 2; ++q) CHECK(untouched.terms[q] == deltas.terms[q]);

  auto joint_value = [&](const WeightSet& w) {
    std::vector<Matrix> grams = {gram(params[0].kernel, data.X).values,
                                 gram(params[1].kernel, data.X).values};
    Vector noise(2);
    noise << params[0].noise_std, params[1].noise_std;
    return log_marginal_joint(StructuredCovariance(w, grams, noise), flatten_tasks(data.Y));
  };

  int iterations = 0;
  StopReason stop = StopReason::MaxIterations;
  const WeightSet optimized =
      fit_step2(data.X, data.Y, params, std::nullopt, {}, &iterations, &stop);
  CHECK(iterations > 0);
  // these two tasks share a latent draw, so transfer must raise the likelihood
  CHECK(joint_value(optimized) > joint_value(deltas) + 1.0);

  // the learned coregionalization couples the tasks
  Matrix coupling = Matrix::Zero(2, 2);
  for (Index q = 0; q < optimized.term_count(); ++q) coupling += optimized.coregionalization(q);
  CHECK(std::abs(coupling(0, 1)) > 0.1);
}

TEST_CASE("no-transfer model reproduces independent GP predictions", "[emgpr]") {
  const CoupledTasks data = coupled_tasks();
  const EmgprModel model = fit_no_transfer(data.X, data.Y);
  REQUIRE(model.ready());

  const Matrix xs = test_support::uniform_matrix(7, 1, 1001);
  const MultiTaskPrediction joint = predict(model, xs);
  for (Index d = 0; d < 2; ++d) {
    const FittedTaskGP single =
        fit_task(data.X, data.Y.col(d), LatentProcessParams::default_init());
    const TaskPrediction task = predict_task(single, xs);
    for (Index i = 0; i < xs.rows(); ++i) {
      CHECK_THAT(joint.mean(i, d), WithinAbs(task.mean[i], 1e-9));
      CHECK_THAT(joint.variance(i, d), WithinAbs(task.variance[i], 1e-9));
    }
  }
}

TEST_CASE("predict matches a dense Kronecker reference", "[emgpr]") {
  // small fixed model, prediction checked against naive dense algebra
  EmgprModel model;
  model.X = data_x4();
  model.Y = data_y4();
  Matrix t0(2, 1), t1(2, 1);
  t0 << 0.9, 0.4;
  t1 << -0.2, 1.1;
  model.weights.terms = {t0, t1};
  model.latent_kernels = {KernelSpec::se(0.6), KernelSpec::se(1.1)};
  model.noise_std.resize(2);
  model.noise_std << 0.25, 0.4;
  model.finalize();

  Matrix xs(2, 2);
  xs << 0.1, 0.2, -0.5, 0.7;
  const MultiTaskPrediction pred = predict(model, xs);
  // frozen reference values (dense route)
  CHECK_THAT(pred.mean(0, 0), WithinRel(-0.18554570293528946, 1e-10));
  CHECK_THAT(pred.mean(1, 0), WithinRel(-0.03595213203576601, 1e-10));
  CHECK_THAT(pred.mean(0, 1), WithinRel(-0.24614680486847695, 1e-10));
  CHECK_THAT(pred.mean(1, 1), WithinRel(-0.27138853985480493, 1e-10));
  CHECK_THAT(pred.variance(0, 0), WithinRel(0.21228157537434278, 1e-9));
  CHECK_THAT(pred.variance(1, 0), WithinRel(0.7600849752458223, 1e-9));
  CHECK_THAT(pred.variance(0, 1), WithinRel(0.18766235020532118, 1e-9));
  CHECK_THAT(pred.variance(1, 1), WithinRel(0.7381791722012546, 1e-9));
}

TEST_CASE("predict_conditioned on the training blocks equals predict", "[emgpr]") {
  const CoupledTasks data = coupled_tasks();
  const EmgprModel model = fit(data.X, data.Y);
  const Matrix xs = test_support::uniform_matrix(6, 1, 2002);

  std::vector<TaskObservations> obs(2);
  for (Index d = 0; d < 2; ++d) {
    obs[static_cast<std::size_t>(d)].X = data.X;
    obs[static_cast<std::size_t>(d)].y = data.Y.col(d);
  }
  const MultiTaskPrediction direct = predict(model, xs);
  const MultiTaskPrediction conditioned = predict_conditioned(model, obs, xs);
  CHECK((direct.mean - conditioned.mean).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((direct.variance - conditioned.variance).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("predict_conditioned accepts jagged observation sets", "[emgpr]") {
  const CoupledTasks data = coupled_tasks();
  const EmgprModel model = fit(data.X, data.Y);
  const Matrix xs = test_support::uniform_matrix(5, 1, 31);

  // task 0 keeps its full training block; task 1 additionally sees the
  // prediction sites themselves (a superset of the isotopic conditioning set)
  std::vector<TaskObservations> obs(2);
  obs[0].X = data.X;
  obs[0].y = data.Y.col(0);
  Matrix x1(data.X.rows() + xs.rows(), 1);
  x1 << data.X, xs;
  const MultiTaskPrediction at_xs = predict(model, xs);
  Vector y1(x1.rows());
  y1 << data.Y.col(1), at_xs.mean.col(1);
  obs[1].X = x1;
  obs[1].y = y1;

  const MultiTaskPrediction pred = predict_conditioned(model, obs, xs);
  REQUIRE(pred.mean.rows() == 5);
  REQUIRE(pred.mean.cols() == 2);
  CHECK(pred.mean.allFinite());
  CHECK(pred.variance.allFinite());
  CHECK((pred.variance.array() >= 0.0).all());

  // conditioning on strictly more observations can only tighten the posterior
  for (Index i = 0; i < 5; ++i) {
    CHECK(pred.variance(i, 0) <= at_xs.variance(i, 0) + 1e-9);
    CHECK(pred.variance(i, 1) <= at_xs.variance(i, 1) + 1e-9);
  }

  std::vector<TaskObservations> empty(2);
  CHECK_THROWS_AS(predict_conditioned(model, empty, xs), std::invalid_argument);
}

TEST_CASE("predict_conditioned works with an empty task block", "[emgpr]") {
  const CoupledTasks data = coupled_tasks();
  const EmgprModel model = fit(data.X, data.Y);
  const Matrix xs = test_support::uniform_matrix(4, 1, 77);

  std::vector<TaskObservations> obs(2);
  obs[1].X = data.X;
  obs[1].y = data.Y.col(1);  // task 0 contributes no observations
  const MultiTaskPrediction pred = predict_conditioned(model, obs, xs);
  CHECK(pred.mean.allFinite());
  // task 0's prediction is driven purely by transfer from task 1
  CHECK(pred.mean.col(0).cwiseAbs().maxCoeff() > 0.01);
}

TEST_CASE("single-kernel joint fit recovers task coupling", "[emgpr]") {
  const CoupledTasks data = coupled_tasks(50);
  EmgprConfig config;
  config.seed = 7;
  const EmgprModel model = fit_icm(data.X, data.Y, 1, config);
  REQUIRE(model.ready());
  REQUIRE(model.latent_kernels.size() == 1);
  CHECK(model.fit_iterations > 0);

  const Matrix b = model.weights.coregionalization(0);
  // y2 = 0.8 y1 structurally: strong positive or negative coupling, ratio near 0.8
  CHECK(std::abs(b(0, 1)) / std::sqrt(b(0, 0) * b(1, 1)) > 0.8);
  CHECK(b(1, 1) / b(0, 0) > 0.3);
  CHECK(b(1, 1) / b(0, 0) < 1.2);

  // prediction quality: better than predicting the mean
  const Matrix xs = test_support::uniform_matrix(30, 1, 555);
  const MultiTaskPrediction pred = predict(model, xs);
  CHECK(pred.mean.allFinite());

  CHECK_THROWS_AS(fit_icm(data.X, data.Y, 0, config), std::invalid_argument);
  CHECK_THROWS_AS(fit_icm(data.X, data.Y, 3, config), std::invalid_argument);
}

TEST_CASE("fits are deterministic under a fixed seed", "[emgpr]") {
  const CoupledTasks data = coupled_tasks();
  EmgprConfig config;
  config.seed = 42;
  const EmgprModel a = fit(data.X, data.Y, config);
  const EmgprModel b = fit(data.X, data.Y, config);
  CHECK(a.weights.flatten() == b.weights.flatten());
  CHECK(a.joint_log_marginal == b.joint_log_marginal);

  const EmgprModel icm_a = fit_icm(data.X, data.Y, 2, config);
  const EmgprModel icm_b = fit_icm(data.X, data.Y, 2, config);
  CHECK(icm_a.weights.flatten() == icm_b.weights.flatten());

  // a different seed gives a different starting point for the joint fit
  EmgprConfig other = config;
  other.seed = 43;
  const EmgprModel icm_c = fit_icm(data.X, data.Y, 2, other);
  CHECK(icm_a.weights.flatten() != icm_c.weights.flatten());
}

TEST_CASE("fit_step2 validates rank and shapes", "[emgpr]") {
  const CoupledTasks data = coupled_tasks(12);
  const std::vector<LatentProcessParams> params =
      fit_step1(data.X, data.Y, LatentProcessParams::default_init());
  EmgprConfig rank2;
  rank2.rank = 2;
  CHECK_THROWS_AS(fit_step2(data.X, data.Y, params, std::nullopt, rank2),
                  std::invalid_argument);

  // explicit rank-2 initial weights are accepted
  WeightSet init;
  init.terms = {test_support::uniform_matrix(2, 2, 8, -0.5, 0.5),
                test_support::uniform_matrix(2, 2, 9, -0.5, 0.5)};
  const WeightSet out = fit_step2(data.X, data.Y, params, init, rank2);
  CHECK(out.rank() == 2);
  CHECK(out.term_count() == 2);

  std::vector<LatentProcessParams> short_params(1, params[0]);
  CHECK_THROWS_AS(fit_step2(data.X, data.Y, short_params), std::invalid_argument);
}
