#include <doctest.h>

#include <iofsmpc/estimation.hpp>
#include <iofsmpc/presets.hpp>
#include <iofsmpc/simlab.hpp>
#include <iofsmpc/uncertainty.hpp>

#include "oracles.hpp"

using namespace iofsmpc;

namespace {
LinearGaussianSystem scalar_sys(double a, double b, double c) {
  Matrix A(1, 1), B(1, 1), C(1, 1), W(1, 1), V(1, 1), S0(1, 1);
  A << a;
  B << b;
  C << c;
  W << 1.0;
  V << 1.0;
  S0 << 1.0;
  return LinearGaussianSystem(A, B, C, W, V, Vector::Zero(1), S0);
}
}  // namespace

TEST_CASE("zero gain reduces the filter to open-loop prediction") {
  auto sys = scalar_sys(0.8, 1.0, 1.0);
  FilterState st{Vector::Constant(1, 2.0), 0};
  Vector u(1), y(1);
  u << 0.5;
  y << 123.0;  // ignored with L = 0
  const auto next = kf_update(st, u, y, sys, Matrix::Zero(1, 1));
  CHECK(next.x_hat(0) == doctest::Approx(0.8 * 2.0 + 0.5).epsilon(1e-14));
  CHECK(next.k == 1);
}

TEST_CASE("unit gain with full measurement copies the observation") {
  auto sys = scalar_sys(0.8, 1.0, 1.0);
  FilterState st{Vector::Constant(1, 2.0), 3};
  Vector u(1), y(1);
  u << -0.25;
  y << 7.0;
  const auto next = kf_update(st, u, y, sys, Matrix::Identity(1, 1));
  // x+ = pred + (y - pred) = y
  CHECK(next.x_hat(0) == doctest::Approx(7.0).epsilon(1e-14));
  CHECK(next.k == 4);
}

TEST_CASE("scalar steady-state gain value") {
  // A=B=C=1, unit noises: P_hat = phi, L = phi/(1+phi)
  auto [L, P_hat] = kalman_design(Matrix::Identity(1, 1), Matrix::Identity(1, 1),
                                  Matrix::Identity(1, 1), Matrix::Identity(1, 1));
  const double phi = 0.5 * (1.0 + std::sqrt(5.0));
  CHECK(L(0, 0) == doctest::Approx(phi / (1.0 + phi)).epsilon(1e-10));
  // phi/(1+phi) = 1/phi which is about 0.618
  CHECK(L(0, 0) == doctest::Approx(0.6180340).epsilon(1e-6));
  CHECK(P_hat(0, 0) > 0.0);
}

TEST_CASE("estimation error follows the advertised error dynamics") {
  // Algebraic identity per step: with Delta = x - x_hat,
  // Delta(k+1) = (A - LCA) Delta(k) + (I - LC) w_x - L w_y(k+1),
  // independent of the input.
  const PaperExample ex = build_paper_example();
  const auto& sys = ex.sys;
  const Matrix& L = ex.bundle.L;
  NoiseStream stream(42, 0);

  Vector x = sample_gaussian(stream, sys.mu_x0, sys.Sigma_x0);
  FilterState filt{sys.mu_x0, 0};
  const Matrix A_err = sys.A - L * sys.C * sys.A;
  const Matrix I = Matrix::Identity(sys.nx(), sys.nx());

  for (int k = 0; k < 25; ++k) {
    const Vector delta = x - filt.x_hat;
    Vector u(1);
    u << std::sin(0.3 * k);  // arbitrary excitation
    const Vector wx = sample_gaussian(stream, Vector::Zero(sys.nx()), sys.Sigma_wx);
    const Vector x_next = sys.A * x + sys.B * u + wx;
    const Vector wy = sample_gaussian(stream, Vector::Zero(sys.ny()), sys.Sigma_wy);
    const Vector y = sys.C * x_next + wy;
    const auto filt_next = kf_update(filt, u, y, sys, L);

    const Vector delta_next = x_next - filt_next.x_hat;
    const Vector predicted = A_err * delta + (I - L * sys.C) * wx - L * wy;
    CHECK((delta_next - predicted).cwiseAbs().maxCoeff() <=
          1e-12 * std::max(1.0, delta_next.norm()));

    x = x_next;
    filt = filt_next;
  }
}

TEST_CASE("error covariance at a finite step matches the exact propagation") {
  // Monte Carlo over trajectories: the estimation error Delta(k) has
  // covariance equal to the bottom-right block of the propagated combined
  // covariance at the same step, up to sampling noise.
  const PaperExample ex = build_paper_example();
  const auto& sys = ex.sys;
  const Matrix& L = ex.bundle.L;

  const int n_traj = 4000;
  const int burn = 60;
  const auto model = build_combined_error_model(sys, ex.bundle.K, L);
  const auto covs = propagate_covariance(model, burn);
  const Matrix Sigma_delta_inf = covs.back().bottomRightCorner(4, 4);
  Matrix acc = Matrix::Zero(4, 4);
  for (int t = 0; t < n_traj; ++t) {
    NoiseStream stream(777, static_cast<std::uint64_t>(t));
    Vector x = sample_gaussian(stream, sys.mu_x0, sys.Sigma_x0);
    FilterState filt{sys.mu_x0, 0};
    const Vector u = Vector::Zero(1);  // error dynamics are input independent
    for (int k = 0; k < burn; ++k) {
      const Vector wx = sample_gaussian(stream, Vector::Zero(4), sys.Sigma_wx);
      x = sys.A * x + sys.B * u + wx;
      const Vector wy = sample_gaussian(stream, Vector::Zero(1), sys.Sigma_wy);
      const Vector y = sys.C * x + wy;
      filt = kf_update(filt, u, y, sys, L);
    }
    const Vector delta = x - filt.x_hat;
    acc += delta * delta.transpose();
  }
  const Matrix emp = acc / n_traj;
  // relative Frobenius error within a few percent at this sample size
  CHECK((emp - Sigma_delta_inf).norm() / Sigma_delta_inf.norm() <= 0.08);
}

TEST_CASE("dimension mismatches are rejected") {
  auto sys = scalar_sys(0.5, 1.0, 1.0);
  FilterState st{Vector::Zero(1), 0};
  CHECK_THROWS_AS(kf_update(st, Vector::Zero(2), Vector::Zero(1), sys,
                            Matrix::Identity(1, 1)),
                  DimensionMismatch);
  CHECK_THROWS_AS(kf_update(st, Vector::Zero(1), Vector::Zero(2), sys,
                            Matrix::Identity(1, 1)),
                  DimensionMismatch);
  CHECK_THROWS_AS(kf_update(st, Vector::Zero(1), Vector::Zero(1), sys,
                            Matrix::Identity(2, 2)),
                  DimensionMismatch);
}
