#pragma once

#include <string>

#include "iofsmpc/core.hpp"
#include "iofsmpc/model.hpp"

namespace iofsmpc {

class SingularInnovation : public Error {
 public:
  explicit SingularInnovation(const std::string& msg)
      : Error("singular innovation: " + msg) {}
};

// Offline design artifacts. Gain convention throughout the repository:
// the applied input is u = v + K e_hat with A + BK stable, i.e. K carries
// the stabilizing (negative feedback) sign.
struct SynthesisBundle {
  Matrix L;              // Kalman gain, n_x x n_y
  Matrix P_hat;          // filter Riccati solution
  Matrix K;              // tube / LQR gain, n_u x n_x
  Matrix P;              // regulator Riccati solution (terminal weight)
  Matrix Sigma_xi_inf;   // steady combined-error covariance, 2n_x x 2n_x
};

inline double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q,
                            const Matrix& R, const Matrix& P) {
  const Matrix S = R + B.transpose() * P * B;
  const Matrix rhs = A.transpose() * P * A -
                     A.transpose() * P * B * S.ldlt().solve(B.transpose() * P * A) +
                     Q;
  return (P - rhs).norm() / std::max(1.0, P.norm());
}

// Stabilizing solution of P = A'PA - A'PB(R+B'PB)^{-1}B'PA + Q by the
// structure-preserving doubling algorithm. Quadratic convergence; iterate
// change tolerance 1e-12, final residual checked against 1e-8.
inline Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q,
                         const Matrix& R, int max_iter = 200) {
  const auto n = A.rows();
  if (B.rows() != n) throw DimensionMismatch("solve_dare: B rows");
  if (Q.rows() != n || Q.cols() != n) throw DimensionMismatch("solve_dare: Q");
  if (R.rows() != B.cols() || R.cols() != B.cols())
    throw DimensionMismatch("solve_dare: R");
  require_spd(R, "R");
  if (!detail::pbh_stabilizable(A, B)) {
    throw PreconditionViolated("solve_dare: (A,B) not stabilizable");
  }
  const Matrix Qs = symmetrized(Q, "Q", 1e-10);
  if (!detail::pbh_detectable(A, detail::matrix_sqrt_spd(Qs))) {
    throw PreconditionViolated("solve_dare: (A,Q^{1/2}) not detectable");
  }

  Matrix Ak = A;
  Matrix Gk = B * R.llt().solve(B.transpose());
  Matrix Hk = Qs;
  const Matrix I = Matrix::Identity(n, n);
  double change = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::PartialPivLU<Matrix> lu_gh((I + Gk * Hk).eval());
    const Matrix W_inv_A = lu_gh.solve(Ak);                  // (I+GH)^{-1} A
    const Matrix H_next = Hk + Ak.transpose() * Hk * W_inv_A;
    // A G (I+HG)^{-1} A' = A (I+GH)^{-1} G A', so the same factorization serves.
    const Matrix G_next = Gk + Ak * lu_gh.solve((Gk * Ak.transpose()).eval());
    const Matrix A_next = Ak * W_inv_A;
    change = (H_next - Hk).norm() / std::max(1.0, H_next.norm());
    Ak = A_next;
    Gk = 0.5 * (G_next + G_next.transpose());
    Hk = 0.5 * (H_next + H_next.transpose());
    if (change <= 1e-12) break;
  }
  const double res = dare_residual(A, B, Qs, R, Hk);
  if (change > 1e-12 || res > 1e-8) {
    throw NoConvergence("solve_dare", max_iter, res);
  }
  if (!is_positive_definite(Hk)) {
    throw NotPsdError("DARE solution P");
  }
  return Hk;
}

// LQR gain in the u = v + K e_hat convention: K = -(R+B'PB)^{-1}B'PA,
// which makes A + BK stable.
inline Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& P,
                       const Matrix& R) {
  const Matrix S = symmetrized((R + B.transpose() * P * B).eval(), "R+B'PB", 1e-9);
  Eigen::JacobiSVD<Matrix> svd(S);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 0.0 || sv(0) / sv(sv.size() - 1) > 1e12) {
    throw SingularInnovation("R + B'PB numerically singular in lqr_gain");
  }
  return -S.ldlt().solve(B.transpose() * P * A);
}

inline double kalman_riccati_residual(const Matrix& A, const Matrix& C,
                                      const Matrix& Sigma_wx,
                                      const Matrix& Sigma_wy, const Matrix& P_hat) {
  const Matrix S = Sigma_wy + C * P_hat * C.transpose();
  const Matrix rhs =
      A * (P_hat - P_hat * C.transpose() * S.ldlt().solve(C * P_hat)) *
          A.transpose() +
      Sigma_wx;
  return (P_hat - rhs).norm() / std::max(1.0, P_hat.norm());
}

// Steady-state Kalman filter design: P_hat solves the filter Riccati
// equation (the DARE of the dual pair), L = P_hat C' (Sigma_wy + C P_hat C')^{-1}.
inline std::pair<Matrix, Matrix> kalman_design(const Matrix& A, const Matrix& C,
                                               const Matrix& Sigma_wx,
                                               const Matrix& Sigma_wy) {
  if (!detail::pbh_detectable(A, C)) {
    throw PreconditionViolated("kalman_design: (A,C) not detectable");
  }
  const Matrix P_hat =
      solve_dare(A.transpose(), C.transpose(), Sigma_wx, Sigma_wy);
  const Matrix S = Sigma_wy + C * P_hat * C.transpose();
  // L = P_hat C' S^{-1}, computed via the symmetric solve S^{-1} C P_hat.
  const Matrix L = S.ldlt().solve(C * P_hat).transpose();
  const double res = kalman_riccati_residual(A, C, Sigma_wx, Sigma_wy, P_hat);
  if (res > 1e-8) {
    throw NoConvergence("kalman_design residual", 0, res);
  }
  if (spectral_radius(A - L * C * A) >= 1.0) {
    throw PreconditionViolated("kalman_design: A - LCA not stable");
  }
  return {L, P_hat};
}

// Discrete Lyapunov equation S = M S M' + W by iterated doubling.
inline Matrix solve_dlyap(const Matrix& M, const Matrix& W, int max_iter = 100) {
  if (M.rows() != M.cols() || W.rows() != M.rows() || W.cols() != M.cols()) {
    throw DimensionMismatch("solve_dlyap");
  }
  if (spectral_radius(M) >= 1.0 - 1e-10) {
    throw UnstableDynamics("solve_dlyap: spectral radius >= 1");
  }
  Matrix S = symmetrized(W, "W", 1e-9);
  Matrix Mk = M;
  for (int it = 0; it < max_iter; ++it) {
    const Matrix S_next = S + Mk * S * Mk.transpose();
    const Matrix M_next = Mk * Mk;
    const double change = (S_next - S).norm() / std::max(1.0, S_next.norm());
    S = 0.5 * (S_next + S_next.transpose());
    Mk = M_next;
    if (change <= 1e-14 && Mk.norm() < 1e-14) break;
  }
  const double res = (S - (M * S * M.transpose() + W)).norm();
  if (res > 1e-10 * std::max(1.0, S.norm())) {
    throw NoConvergence("solve_dlyap", max_iter, res);
  }
  return S;
}

}  // namespace iofsmpc
