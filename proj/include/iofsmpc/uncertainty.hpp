#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "iofsmpc/core.hpp"
#include "iofsmpc/model.hpp"
#include "iofsmpc/synthesis.hpp"

namespace iofsmpc {

class InfeasibleTightening : public Error {
 public:
  InfeasibleTightening(const std::string& constraint_id, int step, double c)
      : Error("tightened half-space empty: constraint " + constraint_id +
              " at step " + std::to_string(step) + " has c = " +
              std::to_string(c) + " >= 1"),
        constraint_id(constraint_id),
        step(step),
        c(c) {}
  std::string constraint_id;
  int step;
  double c;
};

// Standard normal quantile: Acklam's rational approximation refined by one
// Newton step on the erfc-based CDF. Absolute error well below 1e-9.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal_quantile: p must lie in (0,1)");
  }
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Newton refinement on Phi(x) = p.
  const double e = normal_cdf(x) - p;
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  if (pdf > 0.0) x -= e / pdf;
  return x;
}

// chi^2 quantile with one degree of freedom: chi2_1(q) = (Phi^{-1}((1+q)/2))^2.
inline double chi2_quantile_1dof(double q) {
  if (!(q >= 0.0 && q < 1.0)) {
    throw DomainError("chi2_quantile_1dof: q must lie in [0,1)");
  }
  if (q == 0.0) return 0.0;
  const double z = normal_quantile(0.5 * (1.0 + q));
  return z * z;
}

// Combined error dynamics xi = [e; Delta]:
//   xi(k+1) = [[A+BK, -BK], [0, A-LCA]] xi(k) + [[I, 0], [I-LC, -L]] w~(k)
// with w~ = [w_x; w_y(k+1)]. Independent of the true system state.
struct CombinedErrorModel {
  Matrix A_tilde;        // 2n_x x 2n_x
  Matrix B_tilde;        // 2n_x x (n_x + n_y)
  Matrix Sigma_wtilde;   // blockdiag(Sigma_wx, Sigma_wy)
  Matrix Sigma_xi_0;     // [[1,1],[1,1]] kron Sigma_x0 (rank deficient)
  Eigen::Index nx = 0;
  Eigen::Index ny = 0;
};

inline CombinedErrorModel build_combined_error_model(
    const LinearGaussianSystem& sys, const Matrix& K, const Matrix& L) {
  const auto n = sys.nx();
  const auto ny = sys.ny();
  if (K.rows() != sys.nu() || K.cols() != n) {
    throw DimensionMismatch("build_combined_error_model: K must be n_u x n_x");
  }
  if (L.rows() != n || L.cols() != ny) {
    throw DimensionMismatch("build_combined_error_model: L must be n_x x n_y");
  }
  CombinedErrorModel m;
  m.nx = n;
  m.ny = ny;
  const Matrix I = Matrix::Identity(n, n);
  m.A_tilde = Matrix::Zero(2 * n, 2 * n);
  m.A_tilde.topLeftCorner(n, n) = sys.A + sys.B * K;
  m.A_tilde.topRightCorner(n, n) = -sys.B * K;
  m.A_tilde.bottomRightCorner(n, n) = sys.A - L * sys.C * sys.A;
  m.B_tilde = Matrix::Zero(2 * n, n + ny);
  m.B_tilde.topLeftCorner(n, n) = I;
  m.B_tilde.bottomLeftCorner(n, n) = I - L * sys.C;
  m.B_tilde.bottomRightCorner(n, ny) = -L;
  m.Sigma_wtilde = Matrix::Zero(n + ny, n + ny);
  m.Sigma_wtilde.topLeftCorner(n, n) = sys.Sigma_wx;
  m.Sigma_wtilde.bottomRightCorner(ny, ny) = sys.Sigma_wy;
  // e(0) = Delta(0), so the joint initial covariance is the rank-deficient
  // [[1,1],[1,1]] kron Sigma_x0.
  m.Sigma_xi_0 = Matrix::Zero(2 * n, 2 * n);
  m.Sigma_xi_0.topLeftCorner(n, n) = sys.Sigma_x0;
  m.Sigma_xi_0.topRightCorner(n, n) = sys.Sigma_x0;
  m.Sigma_xi_0.bottomLeftCorner(n, n) = sys.Sigma_x0;
  m.Sigma_xi_0.bottomRightCorner(n, n) = sys.Sigma_x0;
  return m;
}

// Covariance recursion Sigma(k+1) = A~ Sigma(k) A~' + B~ Sigma_w~ B~'.
// Iterates are symmetrized; small negative eigenvalues (above -1e-10 trace)
// are clipped to keep every iterate PSD.
inline std::vector<Matrix> propagate_covariance(const CombinedErrorModel& model,
                                                int k_max) {
  if (k_max < 0) throw DomainError("propagate_covariance: k_max must be >= 0");
  const Matrix W =
      model.B_tilde * model.Sigma_wtilde * model.B_tilde.transpose();
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(k_max) + 1);
  Matrix S = model.Sigma_xi_0;
  for (int k = 0; k <= k_max; ++k) {
    S = 0.5 * (S + S.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(S);
    const double floor = -1e-10 * std::max(1.0, S.trace());
    if (es.eigenvalues().minCoeff() < floor) {
      throw Error("propagate_covariance: iterate lost positive semidefiniteness");
    }
    if (es.eigenvalues().minCoeff() < 0.0) {
      Vector clipped = es.eigenvalues().cwiseMax(0.0);
      S = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    }
    out.push_back(S);
    S = model.A_tilde * S * model.A_tilde.transpose() + W;
  }
  return out;
}

// Marginals of the combined error: Sigma_e = [I 0] Sigma_xi [I 0]',
// Sigma_tb = K [I -I] Sigma_xi [I -I]' K'.
inline std::pair<Matrix, Matrix> marginal_covariances(const Matrix& Sigma_xi,
                                                      const Matrix& K) {
  if (Sigma_xi.rows() != Sigma_xi.cols() || Sigma_xi.rows() % 2 != 0) {
    throw DimensionMismatch("marginal_covariances: Sigma_xi must be 2n x 2n");
  }
  const auto n = Sigma_xi.rows() / 2;
  if (K.cols() != n) throw DimensionMismatch("marginal_covariances: K cols");
  const Matrix Sigma_e = Sigma_xi.topLeftCorner(n, n);
  // [I -I] Sigma [I -I]' = S11 - S12 - S21 + S22
  const Matrix D = Sigma_xi.topLeftCorner(n, n) - Sigma_xi.topRightCorner(n, n) -
                   Sigma_xi.bottomLeftCorner(n, n) +
                   Sigma_xi.bottomRightCorner(n, n);
  const Matrix Sigma_tb = K * D * K.transpose();
  return {Sigma_e, Sigma_tb};
}

// Per-step tightening values c_{j,k} for each constraint, plus the
// infinite-step values from the stationary covariance.
struct TighteningSchedule {
  int horizon = 0;  // entries for k = 0..horizon
  std::vector<std::vector<double>> c_x;  // [j][k]
  std::vector<double> c_x_inf;
  std::vector<std::vector<double>> c_u;
  std::vector<double> c_u_inf;
  // |c[j][horizon] - c_inf[j]| per constraint, diagnostics only.
  std::vector<double> tail_gap_x;
  std::vector<double> tail_gap_u;

  double state_tightening(std::size_t j, int k) const {
    return k <= horizon ? c_x[j][static_cast<std::size_t>(k)] : c_x_inf[j];
  }
  double input_tightening(std::size_t j, int k) const {
    return k <= horizon ? c_u[j][static_cast<std::size_t>(k)] : c_u_inf[j];
  }
};

namespace detail {
inline double tightening_value(double p, const Vector& h, const Matrix& Sigma) {
  const double p_tilde = chi2_quantile_1dof(2.0 * p - 1.0);
  const double variance = h.dot(Sigma * h);
  return std::sqrt(p_tilde * std::max(0.0, variance));
}
}  // namespace detail

// Builds the schedule c_{j,k} = sqrt(chi2_1(2p-1) h' Sigma(k) h) for
// k = 0..H together with the infinite-step entries from the Lyapunov
// stationary covariance. Throws when a tightened half-space becomes empty.
inline TighteningSchedule tightening_schedule(
    const CombinedErrorModel& model,
    const std::vector<HalfspaceChanceConstraint>& constraints, const Matrix& K,
    int H) {
  if (H < 0) throw DomainError("tightening_schedule: H must be >= 0");
  TighteningSchedule sched;
  sched.horizon = H;
  const std::vector<Matrix> covs = propagate_covariance(model, H);
  const Matrix W =
      model.B_tilde * model.Sigma_wtilde * model.B_tilde.transpose();
  const Matrix Sigma_xi_inf = solve_dlyap(model.A_tilde, W);
  const auto [Sigma_e_inf, Sigma_tb_inf] = marginal_covariances(Sigma_xi_inf, K);

  for (const auto& con : constraints) {
    const bool is_state = con.kind == ConstraintKind::State;
    std::vector<double> row(static_cast<std::size_t>(H) + 1);
    for (int k = 0; k <= H; ++k) {
      const auto [Se, Stb] = marginal_covariances(covs[static_cast<std::size_t>(k)], K);
      const double c = detail::tightening_value(con.p, con.h, is_state ? Se : Stb);
      if (c >= 1.0) {
        const std::string id = (is_state ? "x" : "u") +
                               std::to_string(is_state ? sched.c_x.size()
                                                       : sched.c_u.size());
        throw InfeasibleTightening(id, k, c);
      }
      row[static_cast<std::size_t>(k)] = c;
    }
    const double c_inf = detail::tightening_value(
        con.p, con.h, is_state ? Sigma_e_inf : Sigma_tb_inf);
    if (c_inf >= 1.0) {
      const std::string id = (is_state ? "x" : "u") +
                             std::to_string(is_state ? sched.c_x.size()
                                                     : sched.c_u.size());
      throw InfeasibleTightening(id, -1, c_inf);
    }
    if (is_state) {
      sched.tail_gap_x.push_back(std::abs(row.back() - c_inf));
      sched.c_x.push_back(std::move(row));
      sched.c_x_inf.push_back(c_inf);
    } else {
      sched.tail_gap_u.push_back(std::abs(row.back() - c_inf));
      sched.c_u.push_back(std::move(row));
      sched.c_u_inf.push_back(c_inf);
    }
  }
  return sched;
}

// Diagnostics export: one row per (k, constraint), columns k,constraint_id,c_value.
inline void write_schedule_csv(const TighteningSchedule& sched,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "k,constraint_id,c_value\n";
  out.precision(17);
  for (std::size_t j = 0; j < sched.c_x.size(); ++j) {
    for (int k = 0; k <= sched.horizon; ++k) {
      out << k << ",x" << j << "," << sched.c_x[j][static_cast<std::size_t>(k)]
          << "\n";
    }
    out << "inf,x" << j << "," << sched.c_x_inf[j] << "\n";
  }
  for (std::size_t j = 0; j < sched.c_u.size(); ++j) {
    for (int k = 0; k <= sched.horizon; ++k) {
      out << k << ",u" << j << "," << sched.c_u[j][static_cast<std::size_t>(k)]
          << "\n";
    }
    out << "inf,u" << j << "," << sched.c_u_inf[j] << "\n";
  }
}

// Full offline design for a system: regulator Riccati + LQR tube gain
// (optionally with its own tube weights), Kalman filter, and the stationary
// combined-error covariance.
inline SynthesisBundle synthesize_bundle(const LinearGaussianSystem& sys,
                                         const Matrix& Q, const Matrix& R,
                                         const Matrix* tube_Q = nullptr,
                                         const Matrix* tube_R = nullptr) {
  SynthesisBundle b;
  b.P = solve_dare(sys.A, sys.B, Q, R);
  if (tube_Q != nullptr || tube_R != nullptr) {
    const Matrix& Qt = tube_Q != nullptr ? *tube_Q : Q;
    const Matrix& Rt = tube_R != nullptr ? *tube_R : R;
    const Matrix Pt = solve_dare(sys.A, sys.B, Qt, Rt);
    b.K = lqr_gain(sys.A, sys.B, Pt, Rt);
  } else {
    b.K = lqr_gain(sys.A, sys.B, b.P, R);
  }
  auto [L, P_hat] = kalman_design(sys.A, sys.C, sys.Sigma_wx, sys.Sigma_wy);
  b.L = std::move(L);
  b.P_hat = std::move(P_hat);
  const CombinedErrorModel model = build_combined_error_model(sys, b.K, b.L);
  const Matrix W =
      model.B_tilde * model.Sigma_wtilde * model.B_tilde.transpose();
  b.Sigma_xi_inf = solve_dlyap(model.A_tilde, W);
  return b;
}

}  // namespace iofsmpc
