#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "iofsmpc/controllers.hpp"
#include "iofsmpc/invariance.hpp"
#include "iofsmpc/model.hpp"
#include "iofsmpc/simlab.hpp"
#include "iofsmpc/synthesis.hpp"
#include "iofsmpc/uncertainty.hpp"

namespace iofsmpc {

// Everything needed to run an experiment: the problem data plus the per-tube
// offline artifacts, assembled once and shared read-only.
struct ExperimentSetup {
  LinearGaussianSystem sys;
  CostWeights weights;
  std::vector<HalfspaceChanceConstraint> constraints;
  ExperimentConfig config;
  std::optional<Matrix> tube_Q;  // aggressive tube weights, when available
  std::optional<Matrix> tube_R;
};

struct TubeArtifacts {
  SynthesisBundle bundle;
  std::shared_ptr<const TighteningSchedule> schedule;
  std::optional<Polytope> terminal;
};

namespace pipedetail {

inline TubeArtifacts build_tube_artifacts(const ExperimentSetup& s,
                                          const Matrix* tube_Q,
                                          const Matrix* tube_R) {
  TubeArtifacts art;
  art.bundle = synthesize_bundle(s.sys, s.weights.Q, s.weights.R, tube_Q, tube_R);
  const CombinedErrorModel model =
      build_combined_error_model(s.sys, art.bundle.K, art.bundle.L);
  const int H = s.config.sim_steps + s.config.horizon;
  art.schedule = std::make_shared<TighteningSchedule>(
      tightening_schedule(model, s.constraints, art.bundle.K, H));
  if (s.config.terminal_mode == TerminalMode::MpiSet) {
    std::vector<TightenedRow> state_rows;
    std::vector<TightenedRow> input_rows;
    std::size_t jx = 0, ju = 0;
    for (const auto& con : s.constraints) {
      if (con.kind == ConstraintKind::State) {
        state_rows.push_back({con.h, 1.0 - art.schedule->c_x_inf[jx++]});
      } else {
        input_rows.push_back({con.h, 1.0 - art.schedule->c_u_inf[ju++]});
      }
    }
    const Matrix A_K = s.sys.A + s.sys.B * art.bundle.K;
    art.terminal =
        compute_mpi_set(A_K, state_rows, input_rows, art.bundle.K);
  }
  return art;
}

}  // namespace pipedetail

// Builds the requested controller list. Recognized names: lqg, iof,
// iof_aggressive, df, df_aggressive, nominal. Aggressive variants require
// tube weights in the setup.
inline std::vector<ControllerSpec> build_controllers(
    const ExperimentSetup& setup, const std::vector<std::string>& names) {
  TubeArtifacts lqr_tube;      // lazily built
  TubeArtifacts aggressive;    // lazily built
  bool have_lqr = false, have_aggr = false;

  auto lqr_artifacts = [&]() -> TubeArtifacts& {
    if (!have_lqr) {
      lqr_tube = pipedetail::build_tube_artifacts(setup, nullptr, nullptr);
      have_lqr = true;
    }
    return lqr_tube;
  };
  auto aggr_artifacts = [&]() -> TubeArtifacts& {
    if (!have_aggr) {
      if (!setup.tube_Q && !setup.tube_R) {
        throw ConfigError("aggressive controllers need tube_Q/tube_R weights");
      }
      aggressive = pipedetail::build_tube_artifacts(
          setup, setup.tube_Q ? &*setup.tube_Q : nullptr,
          setup.tube_R ? &*setup.tube_R : nullptr);
      have_aggr = true;
    }
    return aggressive;
  };

  auto make_mpc = [&](const TubeArtifacts& art, FeedbackMode mode,
                      bool tightened) {
    MpcDesign d{setup.sys,
                setup.config.horizon,
                setup.weights.Q,
                setup.weights.R,
                setup.weights.P,
                mode == FeedbackMode::Nominal
                    ? Matrix(Matrix::Zero(setup.sys.nu(), setup.sys.nx()))
                    : art.bundle.K,
                tightened ? art.schedule : nullptr,
                tightened ? art.terminal : std::nullopt,
                mode,
                setup.constraints};
    return std::make_shared<const MpcController>(std::move(d));
  };

  std::vector<ControllerSpec> specs;
  for (const auto& name : names) {
    ControllerSpec spec;
    spec.name = name;
    if (name == "lqg") {
      spec.type = ControllerType::Lqg;
      spec.K_lqr = lqr_artifacts().bundle.K;
    } else if (name == "iof") {
      spec.type = ControllerType::Mpc;
      spec.mpc = make_mpc(lqr_artifacts(), FeedbackMode::Indirect, true);
    } else if (name == "iof_aggressive") {
      spec.type = ControllerType::Mpc;
      spec.mpc = make_mpc(aggr_artifacts(), FeedbackMode::Indirect, true);
    } else if (name == "df") {
      spec.type = ControllerType::Mpc;
      spec.mpc = make_mpc(lqr_artifacts(), FeedbackMode::Direct, true);
    } else if (name == "df_aggressive") {
      spec.type = ControllerType::Mpc;
      spec.mpc = make_mpc(aggr_artifacts(), FeedbackMode::Direct, true);
    } else if (name == "nominal") {
      spec.type = ControllerType::Mpc;
      // certainty-equivalent baseline: no tightening, no tube, no terminal set
      spec.mpc = make_mpc(lqr_artifacts(), FeedbackMode::Nominal, false);
    } else {
      throw ConfigError("unknown controller name: " + name);
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

// Kalman gain shared by every controller in a campaign.
inline Matrix campaign_kalman_gain(const ExperimentSetup& setup) {
  auto [L, P_hat] =
      kalman_design(setup.sys.A, setup.sys.C, setup.sys.Sigma_wx, setup.sys.Sigma_wy);
  (void)P_hat;
  return L;
}

}  // namespace iofsmpc
