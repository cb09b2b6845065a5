#pragma once

#include <vector>

#include "iofsmpc/core.hpp"
#include "iofsmpc/model.hpp"
#include "iofsmpc/synthesis.hpp"
#include "iofsmpc/uncertainty.hpp"

namespace iofsmpc {

struct PaperExample {
  LinearGaussianSystem sys;
  CostWeights weights;  // Q, R and the Riccati terminal weight P
  std::vector<HalfspaceChanceConstraint> constraints;
  SynthesisBundle bundle;     // LQR tube gain
  Matrix tube_Q_aggressive;   // diag(1,100,1,1), R unchanged
};

// Four dimensional integrator chain, sampling time 0.1, scalar position
// measurement. The single state constraint bounds the velocity component,
// normalized by its stationary closed-loop standard deviation so that an
// LQG controller satisfies it asymptotically at level p = 0.84.
inline PaperExample build_paper_example(const Vector& mu_x0 = Vector::Zero(4)) {
  const double Ts = 0.1;
  Matrix A(4, 4);
  A << 1, Ts, Ts * Ts / 2, Ts * Ts * Ts / 6,
       0, 1, Ts, Ts * Ts / 2,
       0, 0, 1, Ts,
       0, 0, 0, 1;
  Matrix B(4, 1);
  B << Ts * Ts * Ts * Ts / 24, Ts * Ts * Ts / 6, Ts * Ts / 2, Ts;
  Matrix C(1, 4);
  C << 1, 0, 0, 0;
  const Matrix Sigma_wx = B * B.transpose();
  Matrix Sigma_wy(1, 1);
  Sigma_wy << 0.1 * 0.1;
  const Matrix Sigma_x0 = 0.1 * 0.1 * Matrix::Identity(4, 4);

  LinearGaussianSystem sys(A, B, C, Sigma_wx, Sigma_wy, mu_x0, Sigma_x0);

  const Matrix Q = Matrix::Identity(4, 4);
  Matrix R(1, 1);
  R << 0.1;

  SynthesisBundle bundle = synthesize_bundle(sys, Q, R);
  CostWeights weights(Q, R, bundle.P);

  const double var_v = bundle.Sigma_xi_inf(1, 1);
  if (var_v <= 0.0) {
    throw Error("paper example: stationary velocity variance not positive");
  }
  Vector h = Vector::Zero(4);
  h(1) = 1.0 / std::sqrt(var_v);
  std::vector<HalfspaceChanceConstraint> constraints;
  constraints.emplace_back(h, 0.84, ConstraintKind::State);

  Matrix tube_Q = Matrix::Identity(4, 4);
  tube_Q(1, 1) = 100.0;

  return PaperExample{std::move(sys), std::move(weights), std::move(constraints),
                      std::move(bundle), std::move(tube_Q)};
}

inline Vector paper_nonzero_mean() {
  Vector mu(4);
  mu << -1.5, 0, 0, 0;
  return mu;
}

}  // namespace iofsmpc
