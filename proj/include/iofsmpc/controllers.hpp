#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "iofsmpc/core.hpp"
#include "iofsmpc/invariance.hpp"
#include "iofsmpc/model.hpp"
#include "iofsmpc/qp.hpp"
#include "iofsmpc/uncertainty.hpp"

namespace iofsmpc {

class QpInfeasible : public Error {
 public:
  explicit QpInfeasible(const std::string& msg) : Error("QP infeasible: " + msg) {}
};

enum class FeedbackMode { Indirect, Direct, Nominal };

// Offline data of one MPC controller. Immutable; shared read-only across
// simulation workers.
struct MpcDesign {
  LinearGaussianSystem sys;
  int N = 20;
  Matrix Q;
  Matrix R;
  Matrix P;   // terminal weight
  Matrix K;   // tube gain (u = v + K e_hat); zero for nominal MPC
  std::shared_ptr<const TighteningSchedule> schedule;  // null => c == 0
  std::optional<Polytope> terminal;
  FeedbackMode mode = FeedbackMode::Indirect;
  std::vector<HalfspaceChanceConstraint> constraints;
};

struct StepDiagnostics {
  std::string branch;  // "indirect", "direct", "fallback", "nominal"
  int qp_iterations = 0;
  int active_set_size = 0;
  double objective = 0.0;
  bool fast_path = false;
};

struct ControllerState {
  Vector z;  // z(k) = z_1(k-1), initialized z_1(-1) = x_hat(0)
};

// Condensed formulation: z and x-bar are affine in the stacked nominal input
// sequence V, so the QP has N*n_u variables with a constant Hessian and
// constraint matrix; only the linear term and right-hand sides change per step.
class MpcController {
 public:
  explicit MpcController(MpcDesign design) : d_(std::move(design)) {
    const auto nx = d_.sys.nx();
    const auto nu = d_.sys.nu();
    const int N = d_.N;
    const Matrix A_K = d_.sys.A + d_.sys.B * d_.K;

    A_pow_.resize(static_cast<std::size_t>(N) + 1);
    AK_pow_.resize(static_cast<std::size_t>(N) + 1);
    A_pow_[0] = Matrix::Identity(nx, nx);
    AK_pow_[0] = Matrix::Identity(nx, nx);
    for (int i = 1; i <= N; ++i) {
      A_pow_[static_cast<std::size_t>(i)] = d_.sys.A * A_pow_[static_cast<std::size_t>(i - 1)];
      AK_pow_[static_cast<std::size_t>(i)] = A_K * AK_pow_[static_cast<std::size_t>(i - 1)];
    }

    // S_z maps V to the stacked z_1..z_N; T_z maps z_0 there.
    S_z_ = Matrix::Zero(N * nx, N * nu);
    T_z_ = Matrix::Zero(N * nx, nx);
    for (int i = 1; i <= N; ++i) {
      T_z_.middleRows((i - 1) * nx, nx) = A_pow_[static_cast<std::size_t>(i)];
      for (int j = 0; j < i; ++j) {
        S_z_.block((i - 1) * nx, j * nu, nx, nu) =
            A_pow_[static_cast<std::size_t>(i - 1 - j)] * d_.sys.B;
      }
    }

    Matrix Q_bar = Matrix::Zero(N * nx, N * nx);
    for (int i = 1; i < N; ++i) {
      Q_bar.block((i - 1) * nx, (i - 1) * nx, nx, nx) = d_.Q;
    }
    Q_bar.bottomRightCorner(nx, nx) = d_.P;
    R_bar_ = Matrix::Zero(N * nu, N * nu);
    for (int i = 0; i < N; ++i) {
      R_bar_.block(i * nu, i * nu, nu, nu) = d_.R;
    }
    Q_bar_ = Q_bar;
    H_ = S_z_.transpose() * Q_bar * S_z_ + R_bar_;
    H_ = 0.5 * (H_ + H_.transpose());
    H_llt_.compute(H_);
    if (H_llt_.info() != Eigen::Success) {
      throw NumericalBreakdown("condensed MPC Hessian not positive definite");
    }

    // Constant constraint matrix in V; right-hand sides are assembled per step.
    std::vector<Vector> rows;
    for (std::size_t j = 0; j < d_.constraints.size(); ++j) {
      const auto& con = d_.constraints[j];
      if (con.kind == ConstraintKind::State) {
        for (int i = 1; i < N; ++i) {
          Vector row = S_z_.middleRows((i - 1) * nx, nx).transpose() * con.h;
          rows.push_back(row);
          row_kind_.push_back({RowKind::State, j, i});
        }
      } else {
        for (int i = 0; i < N; ++i) {
          Vector row = Vector::Zero(N * nu);
          row.segment(i * nu, nu) = con.h;
          rows.push_back(row);
          row_kind_.push_back({RowKind::Input, j, i});
        }
      }
    }
    if (d_.terminal) {
      const Matrix M = d_.terminal->F * S_z_.bottomRows(nx);
      term_F_zN_ = d_.terminal->F;
      for (Eigen::Index r = 0; r < M.rows(); ++r) {
        rows.push_back(M.row(r).transpose());
        row_kind_.push_back({RowKind::Terminal, static_cast<std::size_t>(r), N});
      }
    }
    A_con_ = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), N * nu);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      A_con_.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    }
  }

  const MpcDesign& design() const { return d_; }

  void reset(const Vector& x_hat0, ControllerState* state) const {
    state->z = x_hat0;
  }

  // One receding-horizon step. Returns u(k) and advances the nominal state
  // to z*_{1|k}.
  Vector step(const Vector& x_hat, int k, ControllerState* state,
              StepDiagnostics* diag = nullptr) const {
    StepDiagnostics local;
    StepDiagnostics& dg = diag != nullptr ? *diag : local;
    switch (d_.mode) {
      case FeedbackMode::Indirect: {
        dg.branch = "indirect";
        auto result = try_solve(x_hat, state->z, k);
        if (!result) {
          throw QpInfeasible(
              "indirect SMPC step at k=" + std::to_string(k) +
              " (contradicts recursive feasibility given feasible start)");
        }
        return commit(*result, x_hat, state->z, state, dg);
      }
      case FeedbackMode::Direct: {
        auto direct = try_solve(x_hat, x_hat, k);
        if (direct) {
          dg.branch = "direct";
          return commit(*direct, x_hat, x_hat, state, dg);
        }
        auto fallback = try_solve(x_hat, state->z, k);
        if (!fallback) {
          throw QpInfeasible("DF-SMPC step at k=" + std::to_string(k) +
                             ": both initializations infeasible");
        }
        dg.branch = "fallback";
        return commit(*fallback, x_hat, state->z, state, dg);
      }
      case FeedbackMode::Nominal: {
        auto direct = try_solve(x_hat, x_hat, k);
        if (direct) {
          dg.branch = "direct";
          return commit(*direct, x_hat, x_hat, state, dg);
        }
        auto fallback = try_solve(x_hat, state->z, k);
        if (!fallback) {
          throw QpInfeasible("nominal MPC step at k=" + std::to_string(k) +
                             ": both initializations infeasible");
        }
        dg.branch = "fallback";
        return commit(*fallback, x_hat, state->z, state, dg);
      }
    }
    throw Error("unreachable");
  }

 private:
  enum class RowKind { State, Input, Terminal };
  struct RowTag {
    RowKind kind;
    std::size_t index;  // constraint index, or terminal row
    int stage;
  };

  struct SolveResult {
    Vector V;
    QpSolution qp;
    bool fast_path = false;
    Vector z0;
  };

  double tightening(RowKind kind, std::size_t j, int abs_k) const {
    if (d_.schedule == nullptr) return 0.0;
    // map global constraint index j to the per-kind index in the schedule
    std::size_t idx = 0;
    for (std::size_t c = 0; c < j; ++c) {
      if (d_.constraints[c].kind == d_.constraints[j].kind) ++idx;
    }
    return kind == RowKind::State ? d_.schedule->state_tightening(idx, abs_k)
                                  : d_.schedule->input_tightening(idx, abs_k);
  }

  std::optional<SolveResult> try_solve(const Vector& x_hat, const Vector& z0,
                                       int k) const {
    const auto nx = d_.sys.nx();
    const auto nu = d_.sys.nu();
    const int N = d_.N;

    // Stage-0 state constraints involve only the fixed z0.
    for (std::size_t j = 0; j < d_.constraints.size(); ++j) {
      const auto& con = d_.constraints[j];
      if (con.kind != ConstraintKind::State) continue;
      const double bound = 1.0 - tightening(RowKind::State, j, k);
      if (con.h.dot(z0) > bound + 1e-9) return std::nullopt;
    }

    const Vector e0 = x_hat - z0;
    // Mean-error and tube-input offsets (constant over the QP).
    Vector E_bar(N * nx);   // e_bar_1..e_bar_N
    Vector D(N * nu);       // K e_bar_0..K e_bar_{N-1}
    for (int i = 1; i <= N; ++i) {
      E_bar.segment((i - 1) * nx, nx) = AK_pow_[static_cast<std::size_t>(i)] * e0;
    }
    for (int i = 0; i < N; ++i) {
      D.segment(i * nu, nu) = d_.K * (AK_pow_[static_cast<std::size_t>(i)] * e0);
    }
    const Vector phi = T_z_ * z0 + E_bar;  // x_bar_1..x_bar_N offset
    const Vector g = S_z_.transpose() * (Q_bar_ * phi) + R_bar_ * D;

    // Right-hand sides.
    Vector b(A_con_.rows());
    for (Eigen::Index r = 0; r < A_con_.rows(); ++r) {
      const RowTag& tag = row_kind_[static_cast<std::size_t>(r)];
      switch (tag.kind) {
        case RowKind::State: {
          const auto& con = d_.constraints[tag.index];
          b(r) = 1.0 - tightening(RowKind::State, tag.index, k + tag.stage) -
                 con.h.dot(A_pow_[static_cast<std::size_t>(tag.stage)] * z0);
          break;
        }
        case RowKind::Input:
          b(r) = 1.0 - tightening(RowKind::Input, tag.index, k + tag.stage);
          break;
        case RowKind::Terminal:
          b(r) = d_.terminal->f(static_cast<Eigen::Index>(tag.index)) -
                 term_F_zN_.row(static_cast<Eigen::Index>(tag.index))
                     .dot(A_pow_[static_cast<std::size_t>(N)] * z0);
          break;
      }
    }

    SolveResult res;
    res.z0 = z0;
    // Fast path: unconstrained minimizer already feasible.
    const Vector V_unc = H_llt_.solve(-g);
    if (A_con_.rows() == 0 || ((A_con_ * V_unc - b).array() <= 1e-10).all()) {
      res.V = V_unc;
      res.fast_path = true;
      res.qp.status = QpStatus::Optimal;
      res.qp.objective = 0.5 * V_unc.dot(H_ * V_unc) + g.dot(V_unc);
      return res;
    }
    QuadraticProgram qp;
    qp.H = H_;
    qp.g = g;
    qp.A_ineq = A_con_;
    qp.b_ineq = b;
    QpSolution sol = solve_qp(qp);
    if (sol.status == QpStatus::Infeasible) return std::nullopt;
    if (sol.status != QpStatus::Optimal) {
      throw NumericalBreakdown("MPC QP hit iteration limit at k=" +
                               std::to_string(k));
    }
    res.V = sol.x_star;
    res.qp = std::move(sol);
    return res;
  }

  Vector commit(const SolveResult& res, const Vector& x_hat, const Vector& z0,
                ControllerState* state, StepDiagnostics& dg) const {
    const auto nu = d_.sys.nu();
    const Vector v0 = res.V.head(nu);
    const Vector u = d_.mode == FeedbackMode::Nominal
                         ? v0
                         : Vector(v0 + d_.K * (x_hat - z0));
    state->z = d_.sys.A * z0 + d_.sys.B * v0;  // z*_{1|k}
    dg.qp_iterations = res.qp.iterations;
    dg.active_set_size = res.qp.active_set_size;
    dg.objective = res.qp.objective;
    dg.fast_path = res.fast_path;
    return u;
  }

  MpcDesign d_;
  std::vector<Matrix> A_pow_;
  std::vector<Matrix> AK_pow_;
  Matrix S_z_;
  Matrix T_z_;
  Matrix Q_bar_;
  Matrix R_bar_;
  Matrix H_;
  Eigen::LLT<Matrix> H_llt_;
  Matrix A_con_;
  Matrix term_F_zN_;
  std::vector<RowTag> row_kind_;
};

// Unconstrained LQG: u = K_lqr x_hat, stateless.
inline Vector lqg_step(const Matrix& K_lqr, const Vector& x_hat) {
  return K_lqr * x_hat;
}

}  // namespace iofsmpc
