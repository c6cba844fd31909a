#include "emgpr/structured_cov.hpp"

#include "emgpr/gp_single.hpp"
#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace emgpr;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Fixed two-task problem shared with the reference computations.
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

WeightSet two_task_weights() {
  WeightSet w;
  Matrix t0(2, 1), t1(2, 1);
  t0 << 0.9, 0.4;
  t1 << -0.2, 1.1;
  w.terms = {t0, t1};
  return w;
}

std::vector<Matrix> two_task_grams(const Matrix& x) {
  return {gram(KernelSpec::se(0.6), x).values, gram(KernelSpec::se(1.1), x).values};
}

Vector two_task_noise() {
  Vector s(2);
  s << 0.25, 0.4;
  return s;
}

}  // namespace

TEST_CASE("delta weights select the diagonal", "[structured_cov]") {
  const WeightSet w = WeightSet::deltas(3);
  REQUIRE(w.term_count() == 3);
  REQUIRE(w.task_count() == 3);
  REQUIRE(w.rank() == 1);
  for (Index q = 0; q < 3; ++q) {
    const Matrix b = w.coregionalization(q);
    for (Index a = 0; a < 3; ++a)
      for (Index c = 0; c < 3; ++c)
        CHECK(b(a, c) == ((a == q && c == q) ? 1.0 : 0.0));
  }
}

TEST_CASE("flatten and unflatten round-trip", "[structured_cov]") {
  WeightSet w;
  w.terms = {test_support::uniform_matrix(3, 2, 41, -1.0, 1.0),
             test_support::uniform_matrix(3, 2, 42, -1.0, 1.0)};
  const Vector flat = w.flatten();
  REQUIRE(flat.size() == 12);
  const WeightSet back = WeightSet::unflatten(flat, 2, 3, 2);
  for (std::size_t q = 0; q < 2; ++q) CHECK(back.terms[q] == w.terms[q]);
  CHECK(flat[0] == w.terms[0](0, 0));  // column-major within a term
  CHECK(flat[1] == w.terms[0](1, 0));
  CHECK_THROWS_AS(WeightSet::unflatten(flat, 2, 3, 3), std::invalid_argument);
}

TEST_CASE("assemble matches a naive Kronecker construction", "[structured_cov]") {
  const Matrix x = data_x4();
  const WeightSet w = two_task_weights();
  const std::vector<Matrix> grams = two_task_grams(x);
  const StructuredCovariance cov = assemble(w, grams, two_task_noise());

  Matrix expected = test_support::naive_kron(w.coregionalization(0), grams[0]) +
                    test_support::naive_kron(w.coregionalization(1), grams[1]);
  Matrix noise_block = Matrix::Zero(2, 2);
  noise_block(0, 0) = 0.25 * 0.25;
  noise_block(1, 1) = 0.4 * 0.4;
  expected += test_support::naive_kron(noise_block, Matrix::Identity(4, 4));

  REQUIRE(cov.matrix().rows() == 8);
  CHECK((cov.matrix() - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((cov.matrix() - cov.matrix().transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-task structured covariance reduces to the plain GP", "[structured_cov]") {
  Matrix x(5, 2);
  x << 0.953, -0.24, 0.846, -0.477, -0.362, -0.764, -0.516, -0.363, 0.928, -0.473;
  Vector y(5);
  y << -0.512, 1.324, -0.86, 0.519, -1.265;

  WeightSet w = WeightSet::deltas(1);
  const StructuredCovariance cov =
      assemble(w, {gram(KernelSpec::se(0.8), x).values}, Vector::Constant(1, 0.3));
  LatentProcessParams params;
  params.kernel = KernelSpec::se(0.8);
  params.noise_std = 0.3;
  CHECK_THAT(log_marginal_joint(cov, y), WithinRel(log_marginal(params, x, y), 1e-12));
}

TEST_CASE("joint likelihood matches the frozen reference", "[structured_cov]") {
  const StructuredCovariance cov =
      assemble(two_task_weights(), two_task_grams(data_x4()), two_task_noise());
  const Vector y = flatten_tasks(data_y4());
  REQUIRE(y.size() == 8);
  // task-major stacking: first task occupies the leading block
  CHECK(y[0] == -1.157);
  CHECK(y[4] == 0.696);
  CHECK_THAT(log_marginal_joint(cov, y), WithinRel(-10.553810442760536, 1e-12));
  CHECK_THAT(log_marginal_joint(cov, y),
             WithinRel(test_support::dense_log_density(cov.matrix(), y), 1e-12));
}

TEST_CASE("weight_grad matches central differences (rank 1)", "[structured_cov]") {
  const StructuredCovariance cov =
      assemble(two_task_weights(), two_task_grams(data_x4()), two_task_noise());
  const Vector grad = weight_grad(cov, flatten_tasks(data_y4()));
  REQUIRE(grad.size() == 4);
  CHECK_THAT(grad[0], WithinRel(-1.6337767085872201, 1e-6));
  CHECK_THAT(grad[1], WithinRel(-2.132078353866973, 1e-6));
  CHECK_THAT(grad[2], WithinRel(-1.34459920797525, 1e-6));
  CHECK_THAT(grad[3], WithinRel(0.13064076753721565, 1e-6));
}

TEST_CASE("weight_grad matches central differences (rank 2, three tasks)", "[structured_cov]") {
  Matrix x(3, 1);
  x << 0.844, -0.693, 0.985;
  Matrix y(3, 3);
  y << -0.877, -0.506, -1.283, -1.33, 0.826, -0.247, -1.7, -1.335, -0.3;
  WeightSet w;
  Matrix t0(3, 2), t1(3, 2);
  t0 << 0.78, -1.054, 1.113, -0.341, -1.198, 0.359;
  t1 << 1.006, -0.155, 0.454, -0.223, -0.008, 1.166;
  w.terms = {t0, t1};
  Vector noise(3);
  noise << 0.3, 0.2, 0.5;
  const std::vector<Matrix> grams = {gram(KernelSpec::se(0.5), x).values,
                                     gram(KernelSpec::se(0.9), x).values};
  const StructuredCovariance cov = assemble(w, grams, noise);
  const Vector yv = flatten_tasks(y);
  CHECK_THAT(log_marginal_joint(cov, yv), WithinRel(-14.175696757431831, 1e-12));

  const Vector grad = weight_grad(cov, yv);
  const double expected[12] = {-2.036309695085947,  5.8032073546598895,  2.189911449512749,
                               -2.076790442728793,  3.993798259216419,   1.5623088396310436,
                               0.13240183704965602, 0.08634282533392934, 0.3334522808984275,
                               -1.0717948466520966, 3.1588098083901173,  0.8556760091593674};
  REQUIRE(grad.size() == 12);
  for (int i = 0; i < 12; ++i) CHECK_THAT(grad[i], WithinRel(expected[i], 1e-5));
}

TEST_CASE("delta weights with shared grams give a block-diagonal matrix", "[structured_cov]") {
  const Matrix x = data_x4();
  const Matrix k = gram(KernelSpec::se(0.7), x).values;
  const StructuredCovariance cov =
      assemble(WeightSet::deltas(2), {k, k}, Vector::Constant(2, 0.1));
  CHECK(cov.matrix().block(0, 4, 4, 4).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cov.matrix().block(4, 0, 4, 4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross_cov matches the naive Kronecker construction", "[structured_cov]") {
  const WeightSet w = two_task_weights();
  Matrix xs(2, 2);
  xs << 0.1, 0.2, -0.5, 0.7;
  const Matrix x = data_x4();
  const std::vector<Matrix> crosses = {gram(KernelSpec::se(0.6), xs, x).values,
                                       gram(KernelSpec::se(1.1), xs, x).values};
  const Matrix result = cross_cov(w, crosses);
  const Matrix expected = test_support::naive_kron(w.coregionalization(0), crosses[0]) +
                          test_support::naive_kron(w.coregionalization(1), crosses[1]);
  REQUIRE(result.rows() == 4);
  REQUIRE(result.cols() == 8);
  CHECK((result - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("structured covariance validates its inputs", "[structured_cov]") {
  const Matrix x = data_x4();
  const WeightSet w = two_task_weights();
  const std::vector<Matrix> grams = two_task_grams(x);

  CHECK_THROWS_AS(assemble(w, {grams[0]}, two_task_noise()), std::invalid_argument);
  CHECK_THROWS_AS(assemble(w, grams, Vector::Constant(3, 0.1)), std::invalid_argument);
  CHECK_THROWS_AS(assemble(w, {grams[0], Matrix::Identity(3, 3)}, two_task_noise()),
                  std::invalid_argument);

  const StructuredCovariance cov = assemble(w, grams, two_task_noise());
  CHECK_THROWS_AS(log_marginal_joint(cov, Vector::Zero(5)), std::invalid_argument);
  CHECK_THROWS_AS(weight_grad(cov, Vector::Zero(5)), std::invalid_argument);

  WeightSet ragged = w;
  ragged.terms[1] = Matrix::Zero(3, 1);
  CHECK_THROWS_AS(ragged.validate(), std::invalid_argument);
}

TEST_CASE("factor is cached and shared across copies", "[structured_cov]") {
  const StructuredCovariance cov =
      assemble(two_task_weights(), two_task_grams(data_x4()), two_task_noise());
  const Eigen::LLT<Matrix>* first = &cov.factor();
  const Eigen::LLT<Matrix>* second = &cov.factor();
  CHECK(first == second);
  const StructuredCovariance copy = cov;  // copies after factorization share the cache
  CHECK(&copy.factor() == first);
}
