#pragma once

#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "iofsmpc/core.hpp"

namespace iofsmpc {

class NumericalBreakdown : public Error {
 public:
  explicit NumericalBreakdown(const std::string& msg)
      : Error("numerical breakdown: " + msg) {}
};

// min 1/2 x'Hx + g'x  s.t.  A_ineq x <= b_ineq, A_eq x = b_eq.
struct QuadraticProgram {
  Matrix H;
  Vector g;
  Matrix A_ineq;  // m x n, may have zero rows count
  Vector b_ineq;
  Matrix A_eq;    // optional, zero rows when absent
  Vector b_eq;

  Eigen::Index num_vars() const { return H.rows(); }

  void check() const {
    const auto n = H.rows();
    if (H.cols() != n) throw DimensionMismatch("QP: H must be square");
    if (relative_asymmetry(H) > 1e-10) throw NotPsdError("QP: H not symmetric");
    if (g.size() != n) throw DimensionMismatch("QP: g");
    if (A_ineq.size() > 0 && A_ineq.cols() != n)
      throw DimensionMismatch("QP: A_ineq cols");
    if (A_ineq.rows() != b_ineq.size()) throw DimensionMismatch("QP: b_ineq");
    if (A_eq.size() > 0 && A_eq.cols() != n) throw DimensionMismatch("QP: A_eq cols");
    if (A_eq.rows() != b_eq.size()) throw DimensionMismatch("QP: b_eq");
  }
};

enum class QpStatus { Optimal, Infeasible, MaxIter };

struct QpSolution {
  Vector x_star;
  double objective = 0.0;
  QpStatus status = QpStatus::MaxIter;
  double kkt_stationarity = std::numeric_limits<double>::infinity();
  double kkt_primal = std::numeric_limits<double>::infinity();
  double kkt_complementarity = std::numeric_limits<double>::infinity();
  Vector multipliers;         // inequality multipliers, >= 0 at optimum
  Vector farkas_certificate;  // nonnegative row combination, set when infeasible
  int iterations = 0;
  int active_set_size = 0;
};

namespace qpdetail {

// Cholesky of H with escalating diagonal jitter up to 1e-10 * scale.
inline Eigen::LLT<Matrix> factorize_with_jitter(const Matrix& H) {
  const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
  double jitter = 0.0;
  for (int attempt = 0; attempt < 6; ++attempt) {
    Matrix Hj = H;
    if (jitter > 0.0) Hj.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(Hj);
    if (llt.info() == Eigen::Success) return llt;
    jitter = jitter == 0.0 ? 1e-14 * scale : jitter * 10.0;
    if (jitter > 1e-10 * scale) break;
  }
  throw NumericalBreakdown("QP cost matrix not positive definite after jitter");
}

// Dual active-set method (Goldfarb-Idnani): starts from the unconstrained
// minimizer and adds the most violated constraint until primal feasible.
// Ties in constraint selection break toward the smallest index, which makes
// iterates bitwise reproducible.
inline QpSolution solve_inequality_qp(const Matrix& H, const Vector& g,
                                      const Matrix& A, const Vector& b) {
  const auto n = H.rows();
  const auto m = A.rows();
  QpSolution sol;
  const Eigen::LLT<Matrix> llt = factorize_with_jitter(H);
  Vector x = llt.solve(-g);
  std::vector<Eigen::Index> active;
  Vector lambda_active(0);
  Vector lambda_full = Vector::Zero(m);

  const double feas_tol =
      1e-10 * (1.0 + (m > 0 ? b.cwiseAbs().maxCoeff() : 0.0));
  const int max_iter = 50 * static_cast<int>(m + 1);
  int iter = 0;

  auto finish = [&](QpStatus status) {
    sol.status = status;
    sol.x_star = x;
    sol.objective = 0.5 * x.dot(H * x) + g.dot(x);
    lambda_full.setZero();
    for (std::size_t i = 0; i < active.size(); ++i) {
      lambda_full(active[i]) = lambda_active(static_cast<Eigen::Index>(i));
    }
    sol.multipliers = lambda_full;
    sol.kkt_stationarity =
        (H * x + g + (m > 0 ? Vector(A.transpose() * lambda_full)
                            : Vector(Vector::Zero(n))))
            .cwiseAbs()
            .maxCoeff();
    sol.kkt_primal =
        m > 0 ? std::max(0.0, (A * x - b).maxCoeff()) : 0.0;
    sol.kkt_complementarity =
        m > 0 ? (lambda_full.array() * (A * x - b).array()).abs().maxCoeff()
              : 0.0;
    sol.iterations = iter;
    sol.active_set_size = static_cast<int>(active.size());
    return sol;
  };

  while (iter < max_iter) {
    // Most violated constraint; smallest index wins ties.
    Eigen::Index p = -1;
    double worst = feas_tol;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = A.row(i).dot(x) - b(i);
      if (s > worst) {
        worst = s;
        p = i;
      }
    }
    if (p < 0) return finish(QpStatus::Optimal);

    const Vector n_p = A.row(p).transpose();
    double lambda_p = 0.0;

    // Inner loop: take primal/dual steps for constraint p until it becomes
    // active or infeasibility is certified.
    while (iter < max_iter) {
      ++iter;
      const Vector Hinv_np = llt.solve(n_p);
      Vector z;
      Vector r(static_cast<Eigen::Index>(active.size()));
      if (active.empty()) {
        z = Hinv_np;
      } else {
        Matrix N(n, static_cast<Eigen::Index>(active.size()));
        for (std::size_t i = 0; i < active.size(); ++i) {
          N.col(static_cast<Eigen::Index>(i)) = A.row(active[i]).transpose();
        }
        const Matrix Hinv_N = llt.solve(N);
        const Matrix M = N.transpose() * Hinv_N;
        r = M.ldlt().solve(N.transpose() * Hinv_np);
        z = Hinv_np - Hinv_N * r;
      }
      const double znorm2 = n_p.dot(z);
      const double s_p = A.row(p).dot(x) - b(p);
      const double z_tol = 1e-12 * std::max(1.0, n_p.squaredNorm());

      double t2 = std::numeric_limits<double>::infinity();
      if (znorm2 > z_tol) t2 = s_p / znorm2;

      double t1 = std::numeric_limits<double>::infinity();
      Eigen::Index drop = -1;
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        if (r(i) > 1e-12) {
          const double ratio = lambda_active(i) / r(i);
          if (ratio < t1) {
            t1 = ratio;
            drop = i;
          }
        }
      }

      if (!std::isfinite(t1) && !std::isfinite(t2)) {
        // n_p is a nonnegative-infeasible combination of active rows:
        // lambda = e_p - sum r_i e_{active_i} with r <= 0 certifies Ax<=b empty.
        Vector cert = Vector::Zero(m);
        cert(p) = 1.0;
        for (Eigen::Index i = 0; i < r.size(); ++i) {
          cert(active[static_cast<std::size_t>(i)]) -= r(i);
        }
        sol = finish(QpStatus::Infeasible);
        sol.farkas_certificate = cert;
        return sol;
      }

      const double t = std::min(t1, t2);
      if (znorm2 > z_tol) x -= t * z;
      lambda_active -= t * r;
      lambda_p += t;

      if (t2 <= t1) {
        active.push_back(p);
        Vector next(lambda_active.size() + 1);
        next.head(lambda_active.size()) = lambda_active;
        next(next.size() - 1) = lambda_p;
        lambda_active = next;
        break;
      }
      // Dual step exhausted a multiplier: drop that constraint and retry.
      active.erase(active.begin() + drop);
      Vector next(lambda_active.size() - 1);
      Eigen::Index w = 0;
      for (Eigen::Index i = 0; i < lambda_active.size(); ++i) {
        if (i != drop) next(w++) = lambda_active(i);
      }
      lambda_active = next;
    }
  }
  return finish(QpStatus::MaxIter);
}

}  // namespace qpdetail

inline QpSolution solve_qp(const QuadraticProgram& qp) {
  qp.check();
  const auto n = qp.num_vars();
  if (qp.A_eq.rows() == 0) {
    return qpdetail::solve_inequality_qp(0.5 * (qp.H + qp.H.transpose()), qp.g,
                                         qp.A_ineq, qp.b_ineq);
  }
  // Null-space elimination of equality constraints: x = x0 + Z y.
  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(qp.A_eq);
  const Vector x0 = cod.solve(qp.b_eq);
  if ((qp.A_eq * x0 - qp.b_eq).cwiseAbs().maxCoeff() >
      1e-8 * (1.0 + qp.b_eq.cwiseAbs().maxCoeff())) {
    QpSolution sol;
    sol.status = QpStatus::Infeasible;
    sol.x_star = x0;
    return sol;
  }
  // Kernel basis from the full SVD.
  Eigen::JacobiSVD<Matrix> svd(qp.A_eq, Eigen::ComputeFullV);
  const auto rank = cod.rank();
  const Matrix Z = svd.matrixV().rightCols(n - rank);
  if (Z.cols() == 0) {
    QpSolution sol;
    sol.status = QpStatus::Optimal;
    sol.x_star = x0;
    sol.objective = 0.5 * x0.dot(qp.H * x0) + qp.g.dot(x0);
    sol.kkt_stationarity = 0.0;
    sol.kkt_primal = qp.A_ineq.rows() > 0
                         ? std::max(0.0, (qp.A_ineq * x0 - qp.b_ineq).maxCoeff())
                         : 0.0;
    if (sol.kkt_primal > 1e-9) sol.status = QpStatus::Infeasible;
    sol.kkt_complementarity = 0.0;
    return sol;
  }
  const Matrix Hr = Z.transpose() * qp.H * Z;
  const Vector gr = Z.transpose() * (qp.H * x0 + qp.g);
  const Matrix Ar = qp.A_ineq.rows() > 0 ? Matrix(qp.A_ineq * Z) : Matrix(0, Z.cols());
  const Vector br = qp.A_ineq.rows() > 0 ? Vector(qp.b_ineq - qp.A_ineq * x0)
                                         : Vector(0);
  QpSolution red = qpdetail::solve_inequality_qp(
      0.5 * (Hr + Hr.transpose()), gr, Ar, br);
  QpSolution sol = red;
  sol.x_star = x0 + Z * red.x_star;
  sol.objective = 0.5 * sol.x_star.dot(qp.H * sol.x_star) + qp.g.dot(sol.x_star);
  return sol;
}

struct LpFeasibility {
  bool feasible = false;
  Vector point;        // a feasible point when feasible
  Vector certificate;  // Farkas-style row combination when infeasible
};

// Decides nonemptiness of {x : Ax <= b} via a phase-1 slack problem solved
// with a tiny quadratic regularization.
inline LpFeasibility solve_lp_feasibility(const Matrix& A, const Vector& b) {
  const auto n = A.cols();
  const auto m = A.rows();
  LpFeasibility out;
  if (m == 0) {
    out.feasible = true;
    out.point = Vector::Zero(n);
    return out;
  }
  // Variables (x, s): min 1e-8(|x|^2 + s^2) + s  s.t.  Ax - s 1 <= b, -s <= 0.
  QuadraticProgram qp;
  qp.H = 2e-8 * Matrix::Identity(n + 1, n + 1);
  qp.g = Vector::Zero(n + 1);
  qp.g(n) = 1.0;
  qp.A_ineq = Matrix::Zero(m + 1, n + 1);
  qp.A_ineq.topLeftCorner(m, n) = A;
  qp.A_ineq.col(n).head(m).setConstant(-1.0);
  qp.A_ineq(m, n) = -1.0;
  qp.b_ineq = Vector::Zero(m + 1);
  qp.b_ineq.head(m) = b;
  const QpSolution sol = solve_qp(qp);
  if (sol.status != QpStatus::Optimal) {
    throw NumericalBreakdown("phase-1 LP did not reach optimality");
  }
  const double s = sol.x_star(n);
  const double scale = 1.0 + b.cwiseAbs().maxCoeff();
  if (s <= 1e-6 * scale) {
    out.feasible = true;
    out.point = sol.x_star.head(n);
    return out;
  }
  out.feasible = false;
  out.certificate = sol.multipliers.head(m);
  return out;
}

// Plain-matrix dump for offline debugging. Row counts then rows, one matrix
// per block.
inline void dump_qp(const QuadraticProgram& qp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.precision(17);
  auto block = [&out](const std::string& name, const Matrix& m) {
    out << name << " " << m.rows() << " " << m.cols() << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        out << m(i, j) << (j + 1 == m.cols() ? "" : " ");
      }
      out << "\n";
    }
  };
  block("H", qp.H);
  block("g", qp.g);
  block("A_ineq", qp.A_ineq);
  block("b_ineq", qp.b_ineq);
  block("A_eq", qp.A_eq);
  block("b_eq", qp.b_eq);
}

}  // namespace iofsmpc
