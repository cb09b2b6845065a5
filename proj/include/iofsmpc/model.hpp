#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "iofsmpc/core.hpp"

namespace iofsmpc {

// Plant x+ = Ax + Bu + w_x, y = Cx + w_y with Gaussian noise and Gaussian
// initial state. Immutable after construction; construction validates
// symmetry, positive definiteness, and mutual dimension consistency.
struct LinearGaussianSystem {
  Matrix A;
  Matrix B;
  Matrix C;
  Matrix Sigma_wx;
  Matrix Sigma_wy;
  Vector mu_x0;
  Matrix Sigma_x0;

  LinearGaussianSystem(Matrix A_in, Matrix B_in, Matrix C_in, Matrix Sigma_wx_in,
                       Matrix Sigma_wy_in, Vector mu_x0_in, Matrix Sigma_x0_in)
      : A(std::move(A_in)),
        B(std::move(B_in)),
        C(std::move(C_in)),
        Sigma_wx(std::move(Sigma_wx_in)),
        Sigma_wy(std::move(Sigma_wy_in)),
        mu_x0(std::move(mu_x0_in)),
        Sigma_x0(std::move(Sigma_x0_in)) {
    const auto nx = A.rows();
    if (A.cols() != nx) throw DimensionMismatch("A must be square");
    if (B.rows() != nx) throw DimensionMismatch("B rows must match A");
    if (C.cols() != nx) throw DimensionMismatch("C cols must match A");
    if (Sigma_wx.rows() != nx || Sigma_wx.cols() != nx)
      throw DimensionMismatch("Sigma_wx must be n_x x n_x");
    if (Sigma_wy.rows() != C.rows() || Sigma_wy.cols() != C.rows())
      throw DimensionMismatch("Sigma_wy must be n_y x n_y");
    if (mu_x0.size() != nx) throw DimensionMismatch("mu_x0 must have length n_x");
    if (Sigma_x0.rows() != nx || Sigma_x0.cols() != nx)
      throw DimensionMismatch("Sigma_x0 must be n_x x n_x");
    Sigma_wx = symmetrized(Sigma_wx, "Sigma_wx");
    Sigma_wy = symmetrized(Sigma_wy, "Sigma_wy");
    Sigma_x0 = symmetrized(Sigma_x0, "Sigma_x0");
    // Sigma_wx is accepted positive semidefinite: rank-deficient process
    // noise (e.g. disturbances entering through the input channel) is a
    // legitimate model; sampling and Riccati synthesis both handle it.
    {
      Eigen::SelfAdjointEigenSolver<Matrix> es(Sigma_wx);
      if (es.eigenvalues().minCoeff() <
          -1e-12 * std::max(1.0, Sigma_wx.trace())) {
        throw NotPsdError("Sigma_wx");
      }
    }
    if (!is_positive_definite(Sigma_wy)) throw NotPsdError("Sigma_wy");
    if (!is_positive_definite(Sigma_x0)) throw NotPsdError("Sigma_x0");
  }

  Eigen::Index nx() const { return A.rows(); }
  Eigen::Index nu() const { return B.cols(); }
  Eigen::Index ny() const { return C.rows(); }
};

enum class ConstraintKind { State, Input };

// Half-space chance constraint Pr(h^T x <= 1) >= p, stored in the normalized
// form with unit right-hand side. General h^T x <= b must be pre-divided.
struct HalfspaceChanceConstraint {
  Vector h;
  double p;
  ConstraintKind kind;

  HalfspaceChanceConstraint(Vector h_in, double p_in, ConstraintKind kind_in)
      : h(std::move(h_in)), p(p_in), kind(kind_in) {
    if (!h.allFinite() || h.norm() == 0.0) {
      throw DomainError("constraint direction must be finite and nonzero");
    }
    if (!(p > 0.0 && p < 1.0)) {
      throw DomainError("constraint probability must lie strictly in (0,1)");
    }
  }
};

struct CostWeights {
  Matrix Q;
  Matrix R;
  Matrix P;  // terminal weight

  CostWeights(Matrix Q_in, Matrix R_in, Matrix P_in)
      : Q(std::move(Q_in)), R(std::move(R_in)), P(std::move(P_in)) {
    require_spd(Q, "Q");
    require_spd(R, "R");
    require_spd(P, "P");
    Q = symmetrized(Q, "Q");
    R = symmetrized(R, "R");
    P = symmetrized(P, "P");
  }
};

enum class TerminalMode { MpiSet, None };

struct ExperimentConfig {
  int horizon = 20;       // MPC prediction horizon N
  int sim_steps = 100;    // closed-loop length N_bar
  int num_trajectories = 1;
  std::uint64_t master_seed = 0;
  std::vector<std::string> controllers;
  TerminalMode terminal_mode = TerminalMode::MpiSet;
  bool measure_at_t0 = false;

  void validate() const {
    if (horizon < 1) throw DomainError("horizon must be >= 1");
    if (sim_steps < 1) throw DomainError("sim_steps must be >= 1");
    if (num_trajectories < 1) throw DomainError("num_trajectories must be >= 1");
  }
};

struct ValidationReport {
  bool stabilizable = false;
  bool detectable_Q = false;   // (A, Q^{1/2})
  bool detectable_C = false;   // (A, C)
  bool ok() const { return stabilizable && detectable_Q && detectable_C; }
};

namespace detail {

inline Eigen::Index numeric_rank(const Eigen::MatrixXcd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) return 0;
  const double tol = 1e-9 * sv(0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol) ++rank;
  }
  return rank;
}

// PBH test: (A,B) stabilizable iff rank([lambda I - A, B]) = n_x for every
// eigenvalue lambda of A with |lambda| >= 1.
inline bool pbh_stabilizable(const Matrix& A, const Matrix& B) {
  const auto n = A.rows();
  const Eigen::VectorXcd eigs = A.eigenvalues();
  for (Eigen::Index i = 0; i < eigs.size(); ++i) {
    if (std::abs(eigs(i)) < 1.0) continue;
    Eigen::MatrixXcd pencil(n, n + B.cols());
    pencil.leftCols(n) =
        eigs(i) * Eigen::MatrixXcd::Identity(n, n) - A.cast<std::complex<double>>();
    pencil.rightCols(B.cols()) = B.cast<std::complex<double>>();
    if (numeric_rank(pencil) < n) return false;
  }
  return true;
}

inline bool pbh_detectable(const Matrix& A, const Matrix& C) {
  return pbh_stabilizable(A.transpose(), C.transpose());
}

inline Matrix matrix_sqrt_spd(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  return es.operatorSqrt();
}

}  // namespace detail

// Reports stabilizability of (A,B) and detectability of (A, Q^{1/2}) and
// (A, C). Deterministic and pure.
inline ValidationReport validate_system(const LinearGaussianSystem& sys,
                                        const Matrix& Q) {
  if (Q.rows() != sys.nx() || Q.cols() != sys.nx()) {
    throw DimensionMismatch("Q must be n_x x n_x");
  }
  ValidationReport report;
  report.stabilizable = detail::pbh_stabilizable(sys.A, sys.B);
  const Matrix Q_half = detail::matrix_sqrt_spd(symmetrized(Q, "Q"));
  report.detectable_Q = detail::pbh_detectable(sys.A, Q_half);
  report.detectable_C = detail::pbh_detectable(sys.A, sys.C);
  return report;
}

}  // namespace iofsmpc
