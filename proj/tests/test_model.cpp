#include <doctest.h>

#include <iofsmpc/model.hpp>
#include <iofsmpc/presets.hpp>

#include "oracles.hpp"

using namespace iofsmpc;

namespace {

LinearGaussianSystem scalar_system(double a, double b, double c) {
  Matrix A(1, 1), B(1, 1), C(1, 1), W(1, 1), V(1, 1), S0(1, 1);
  A << a;
  B << b;
  C << c;
  W << 1.0;
  V << 1.0;
  S0 << 1.0;
  Vector mu = Vector::Zero(1);
  return LinearGaussianSystem(A, B, C, W, V, mu, S0);
}

}  // namespace

TEST_CASE("system construction validates dimensions and definiteness") {
  Matrix A = Matrix::Identity(2, 2);
  Matrix B = Matrix::Ones(2, 1);
  Matrix C = Matrix::Ones(1, 2);
  Matrix W = Matrix::Identity(2, 2);
  Matrix V = Matrix::Identity(1, 1);
  Matrix S0 = Matrix::Identity(2, 2);
  Vector mu = Vector::Zero(2);

  CHECK_NOTHROW(LinearGaussianSystem(A, B, C, W, V, mu, S0));
  CHECK_THROWS_AS(LinearGaussianSystem(A, Matrix::Ones(3, 1), C, W, V, mu, S0),
                  DimensionMismatch);
  CHECK_THROWS_AS(LinearGaussianSystem(A, B, C, W, -V, mu, S0), NotPsdError);
  Matrix asym = W;
  asym(0, 1) = 0.5;  // badly asymmetric
  CHECK_THROWS_AS(LinearGaussianSystem(A, B, C, W, V, mu, asym), NotPsdError);
}

TEST_CASE("constraint and weight validation") {
  Vector h(2);
  h << 1, 0;
  CHECK_NOTHROW(HalfspaceChanceConstraint(h, 0.84, ConstraintKind::State));
  CHECK_THROWS_AS(HalfspaceChanceConstraint(Vector::Zero(2), 0.5, ConstraintKind::State),
                  DomainError);
  CHECK_THROWS_AS(HalfspaceChanceConstraint(h, 1.0, ConstraintKind::State), DomainError);
  CHECK_THROWS_AS(HalfspaceChanceConstraint(h, 0.0, ConstraintKind::State), DomainError);

  Matrix I = Matrix::Identity(2, 2);
  CHECK_NOTHROW(CostWeights(I, I, I));
  CHECK_THROWS_AS(CostWeights(-I, I, I), NotPsdError);
}

TEST_CASE("validate_system on trivial systems") {
  // A=0: all eigenvalues inside the unit circle.
  auto sys0 = scalar_system(0.0, 0.0, 0.0);
  Matrix Q(1, 1);
  Q << 1.0;
  auto report = validate_system(sys0, Q);
  CHECK(report.stabilizable);
  CHECK(report.detectable_Q);
  CHECK(report.detectable_C);

  // Integrator without input: not stabilizable, but detectable through C=1.
  auto sys1 = scalar_system(1.0, 0.0, 1.0);
  auto report1 = validate_system(sys1, Q);
  CHECK_FALSE(report1.stabilizable);
  CHECK(report1.detectable_Q);
  CHECK(report1.detectable_C);
}

TEST_CASE("validate_system agrees with Kalman rank oracle on the integrator chain") {
  const PaperExample ex = build_paper_example();
  auto report = validate_system(ex.sys, ex.weights.Q);
  CHECK(report.stabilizable);
  CHECK(report.detectable_Q);
  CHECK(report.detectable_C);

  // Kalman rank condition oracle: controllability matrix [B AB A^2B A^3B].
  const auto n = ex.sys.nx();
  Matrix ctrb(n, n * ex.sys.nu());
  Matrix Ai = Matrix::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ctrb.middleCols(i * ex.sys.nu(), ex.sys.nu()) = Ai * ex.sys.B;
    Ai = ex.sys.A * Ai;
  }
  Eigen::JacobiSVD<Matrix> svd(ctrb);
  CHECK(svd.singularValues()(n - 1) > 1e-9 * svd.singularValues()(0));

  Matrix obsv(n * ex.sys.ny(), n);
  Ai = Matrix::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    obsv.middleRows(i * ex.sys.ny(), ex.sys.ny()) = ex.sys.C * Ai;
    Ai = ex.sys.A * Ai;
  }
  Eigen::JacobiSVD<Matrix> svd_o(obsv);
  CHECK(svd_o.singularValues()(n - 1) > 1e-9 * svd_o.singularValues()(0));
}

TEST_CASE("validation is deterministic") {
  const PaperExample ex = build_paper_example();
  auto r1 = validate_system(ex.sys, ex.weights.Q);
  auto r2 = validate_system(ex.sys, ex.weights.Q);
  CHECK(r1.stabilizable == r2.stabilizable);
  CHECK(r1.detectable_Q == r2.detectable_Q);
  CHECK(r1.detectable_C == r2.detectable_C);
}

TEST_CASE("paper preset matches the published values") {
  const PaperExample ex = build_paper_example();
  CHECK(ex.sys.A(0, 1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(ex.sys.A(0, 3) == doctest::Approx(0.001 / 6.0).epsilon(1e-12));
  CHECK(ex.sys.A(1, 2) == doctest::Approx(0.1));
  CHECK(ex.sys.B(3, 0) == doctest::Approx(0.1));
  CHECK(ex.sys.C(0, 0) == 1.0);
  CHECK(ex.sys.Sigma_wy(0, 0) == doctest::Approx(0.01));
  CHECK(ex.sys.Sigma_x0(2, 2) == doctest::Approx(0.01));
  REQUIRE(ex.constraints.size() == 1);
  CHECK(ex.constraints[0].p == doctest::Approx(0.84));
  // h is supported on the velocity component only, normalized by the
  // stationary standard deviation.
  CHECK(ex.constraints[0].h(0) == 0.0);
  CHECK(ex.constraints[0].h(2) == 0.0);
  CHECK(ex.constraints[0].h(3) == 0.0);
  const double sigma22 = ex.bundle.Sigma_xi_inf(1, 1);
  CHECK(ex.constraints[0].h(1) == doctest::Approx(1.0 / std::sqrt(sigma22)));
  // Sigma_wx = B B^T
  CHECK((ex.sys.Sigma_wx - ex.sys.B * ex.sys.B.transpose()).norm() == 0.0);
}
