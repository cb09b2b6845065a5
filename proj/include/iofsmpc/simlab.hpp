#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "iofsmpc/controllers.hpp"
#include "iofsmpc/core.hpp"
#include "iofsmpc/estimation.hpp"
#include "iofsmpc/model.hpp"
#include "iofsmpc/uncertainty.hpp"

namespace iofsmpc {

// Counter-based deterministic stream: a SplitMix64-style hash of
// (derived key, counter), mapped to normals through the quantile function.
// Streams for distinct trajectory indices use distinct derived keys, so the
// same seed and index reproduce identical draws on every platform.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t master_seed, std::uint64_t trajectory_index)
      : key_(derive_key(master_seed, trajectory_index)) {}

  double uniform() {
    std::uint64_t z = key_ + (++counter_) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    // (0,1) strictly: offset the 53-bit mantissa by half an ulp.
    return (static_cast<double>(z >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_quantile(uniform()); }

  Vector normal_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

 private:
  static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed ^ (0xD1B54A32D192ED03ull * (index + 1));
    z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDull;
    z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ull;
    return z ^ (z >> 33);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// mean + chol(cov) eta. PSD covariances are accepted: a failed Cholesky is
// retried with jitter up to 1e-12 trace, then via an eigenvalue square root.
inline Vector sample_gaussian(NoiseStream& stream, const Vector& mean,
                              const Matrix& covariance) {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
    throw DimensionMismatch("sample_gaussian");
  }
  if (covariance.isZero(0.0)) return mean;
  const Vector eta = stream.normal_vector(mean.size());
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() == Eigen::Success) {
    return mean + llt.matrixL() * eta;
  }
  Matrix jittered = covariance;
  jittered.diagonal().array() += 1e-12 * std::max(1.0, covariance.trace());
  Eigen::LLT<Matrix> llt2(jittered);
  if (llt2.info() == Eigen::Success) {
    return mean + llt2.matrixL() * eta;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(covariance);
  const double floor = -1e-10 * std::max(1.0, covariance.trace());
  if (es.eigenvalues().minCoeff() < floor) {
    throw NotPsdError("sample_gaussian covariance");
  }
  const Matrix root = es.eigenvectors() *
                      es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  return mean + root * eta;
}

enum class ControllerType { Lqg, Mpc };

// One closed-loop policy behind a common stepping interface.
struct ControllerSpec {
  std::string name;
  ControllerType type = ControllerType::Lqg;
  Matrix K_lqr;  // for Lqg
  std::shared_ptr<const MpcController> mpc;  // for Mpc
};

struct TrajectoryRecord {
  std::vector<Vector> states;     // x(0)..x(N_bar)
  std::vector<Vector> estimates;  // x_hat(0)..x_hat(N_bar)
  std::vector<Vector> nominals;   // z(k) used at each step (MPC only)
  std::vector<Vector> inputs;     // u(0)..u(N_bar-1)
  double cost = 0.0;
  // violation indicator per constraint: state constraints indexed first,
  // then input constraints; bit per time step.
  std::vector<std::vector<bool>> violations;
  bool infeasible = false;
  int infeasible_step = -1;
  int fallback_steps = 0;  // DF/nominal branch fell back to indirect init
};

struct SimulationSettings {
  int sim_steps = 100;
  bool measure_at_t0 = false;
  bool strict = false;
  int parallelism = 1;
};

// Closed loop of plant, filter and controller on one seeded stream.
inline TrajectoryRecord run_trajectory(const LinearGaussianSystem& sys,
                                       const ControllerSpec& controller,
                                       const Matrix& L, const CostWeights& weights,
                                       const std::vector<HalfspaceChanceConstraint>& constraints,
                                       NoiseStream& stream,
                                       const SimulationSettings& settings) {
  const int N_bar = settings.sim_steps;
  TrajectoryRecord rec;
  rec.states.reserve(static_cast<std::size_t>(N_bar) + 1);
  rec.inputs.reserve(static_cast<std::size_t>(N_bar));

  Vector x = sample_gaussian(stream, sys.mu_x0, sys.Sigma_x0);
  FilterState filter{sys.mu_x0, 0};
  if (settings.measure_at_t0) {
    const Vector y0 = sys.C * x + sample_gaussian(stream, Vector::Zero(sys.ny()),
                                                  sys.Sigma_wy);
    filter.x_hat = sys.mu_x0 + L * (y0 - sys.C * sys.mu_x0);
  }
  ControllerState ctrl_state;
  if (controller.type == ControllerType::Mpc) {
    controller.mpc->reset(filter.x_hat, &ctrl_state);
  }

  rec.states.push_back(x);
  rec.estimates.push_back(filter.x_hat);

  for (int k = 0; k < N_bar; ++k) {
    Vector u;
    try {
      if (controller.type == ControllerType::Lqg) {
        u = lqg_step(controller.K_lqr, filter.x_hat);
      } else {
        rec.nominals.push_back(ctrl_state.z);
        StepDiagnostics diag;
        u = controller.mpc->step(filter.x_hat, k, &ctrl_state, &diag);
        if (diag.branch == "fallback") ++rec.fallback_steps;
      }
    } catch (const QpInfeasible&) {
      rec.infeasible = true;
      rec.infeasible_step = k;
      throw;
    }
    rec.inputs.push_back(u);

    const Vector wx = sample_gaussian(stream, Vector::Zero(sys.nx()), sys.Sigma_wx);
    x = sys.A * x + sys.B * u + wx;
    const Vector wy = sample_gaussian(stream, Vector::Zero(sys.ny()), sys.Sigma_wy);
    const Vector y = sys.C * x + wy;
    filter = kf_update(filter, u, y, sys, L);
    rec.states.push_back(x);
    rec.estimates.push_back(filter.x_hat);
  }

  double cost = rec.states.back().dot(weights.P * rec.states.back());
  for (int k = 0; k < N_bar; ++k) {
    const Vector& xk = rec.states[static_cast<std::size_t>(k)];
    const Vector& uk = rec.inputs[static_cast<std::size_t>(k)];
    cost += xk.dot(weights.Q * xk) + uk.dot(weights.R * uk);
  }
  rec.cost = cost;

  rec.violations.resize(constraints.size());
  for (std::size_t j = 0; j < constraints.size(); ++j) {
    const auto& con = constraints[j];
    if (con.kind == ConstraintKind::State) {
      rec.violations[j].resize(static_cast<std::size_t>(N_bar) + 1);
      for (int k = 0; k <= N_bar; ++k) {
        rec.violations[j][static_cast<std::size_t>(k)] =
            con.h.dot(rec.states[static_cast<std::size_t>(k)]) > 1.0;
      }
    } else {
      rec.violations[j].resize(static_cast<std::size_t>(N_bar));
      for (int k = 0; k < N_bar; ++k) {
        rec.violations[j][static_cast<std::size_t>(k)] =
            con.h.dot(rec.inputs[static_cast<std::size_t>(k)]) > 1.0;
      }
    }
  }
  return rec;
}

struct ControllerReport {
  std::string name;
  double avg_cost_raw = 0.0;
  double avg_cost_normalized = 0.0;
  // per constraint, per step empirical violation frequency
  std::vector<std::vector<double>> violation_frequency;
  double max_violation = 0.0;
  int infeasible_count = 0;
  int completed = 0;
  long fallback_steps = 0;
};

struct SimulationReport {
  std::vector<ControllerReport> controllers;
  int num_trajectories = 0;
  std::uint64_t master_seed = 0;
};

// Monte Carlo campaign with common random numbers: every controller re-uses
// the stream keyed by (master_seed, trajectory index). Trajectories run in
// parallel; aggregation is an ordered reduction over trajectory indices so
// parallel and serial runs produce identical reports.
inline SimulationReport run_campaign(const LinearGaussianSystem& sys,
                                     const std::vector<ControllerSpec>& controllers,
                                     const Matrix& L, const CostWeights& weights,
                                     const std::vector<HalfspaceChanceConstraint>& constraints,
                                     int num_trajectories, std::uint64_t master_seed,
                                     const SimulationSettings& settings) {
  SimulationReport report;
  report.num_trajectories = num_trajectories;
  report.master_seed = master_seed;

  for (const auto& ctrl : controllers) {
    struct PerTrajectory {
      double cost = 0.0;
      bool infeasible = false;
      int fallback_steps = 0;
      std::vector<std::vector<bool>> violations;
    };
    std::vector<PerTrajectory> results(static_cast<std::size_t>(num_trajectories));

    auto worker = [&](int begin, int end) {
      for (int t = begin; t < end; ++t) {
        NoiseStream stream(master_seed, static_cast<std::uint64_t>(t));
        auto& out = results[static_cast<std::size_t>(t)];
        try {
          TrajectoryRecord rec = run_trajectory(sys, ctrl, L, weights, constraints,
                                                stream, settings);
          out.cost = rec.cost;
          out.violations = std::move(rec.violations);
          out.fallback_steps = rec.fallback_steps;
        } catch (const QpInfeasible&) {
          out.infeasible = true;
        }
      }
    };

    const int threads = std::max(1, settings.parallelism);
    if (threads == 1) {
      worker(0, num_trajectories);
    } else {
      std::vector<std::thread> pool;
      const int chunk = (num_trajectories + threads - 1) / threads;
      for (int t = 0; t < threads; ++t) {
        const int begin = t * chunk;
        const int end = std::min(num_trajectories, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back(worker, begin, end);
      }
      for (auto& th : pool) th.join();
    }

    ControllerReport cr;
    cr.name = ctrl.name;
    double cost_sum = 0.0;
    cr.violation_frequency.resize(constraints.size());
    std::vector<std::vector<long>> counts(constraints.size());
    for (std::size_t j = 0; j < constraints.size(); ++j) {
      const std::size_t len = constraints[j].kind == ConstraintKind::State
                                  ? static_cast<std::size_t>(settings.sim_steps) + 1
                                  : static_cast<std::size_t>(settings.sim_steps);
      counts[j].assign(len, 0);
    }
    // ordered reduction: trajectory index ascending
    for (int t = 0; t < num_trajectories; ++t) {
      const auto& out = results[static_cast<std::size_t>(t)];
      if (out.infeasible) {
        ++cr.infeasible_count;
        continue;
      }
      ++cr.completed;
      cost_sum += out.cost;
      cr.fallback_steps += out.fallback_steps;
      for (std::size_t j = 0; j < counts.size(); ++j) {
        for (std::size_t k = 0; k < counts[j].size(); ++k) {
          if (out.violations[j][k]) ++counts[j][k];
        }
      }
    }
    const double denom = std::max(1, cr.completed);
    cr.avg_cost_raw = cost_sum / denom;
    cr.avg_cost_normalized = cr.avg_cost_raw / settings.sim_steps;
    for (std::size_t j = 0; j < counts.size(); ++j) {
      cr.violation_frequency[j].resize(counts[j].size());
      for (std::size_t k = 0; k < counts[j].size(); ++k) {
        const double freq = static_cast<double>(counts[j][k]) / denom;
        cr.violation_frequency[j][k] = freq;
        cr.max_violation = std::max(cr.max_violation, freq);
      }
    }
    if (settings.strict && cr.infeasible_count > 0) {
      throw QpInfeasible("controller " + cr.name + ": " +
                         std::to_string(cr.infeasible_count) +
                         " infeasible trajectories (seed " +
                         std::to_string(master_seed) + ")");
    }
    report.controllers.push_back(std::move(cr));
  }
  return report;
}

inline void write_violation_csv(const SimulationReport& report,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.precision(17);
  out << "k,controller,constraint_id,frequency\n";
  for (const auto& cr : report.controllers) {
    for (std::size_t j = 0; j < cr.violation_frequency.size(); ++j) {
      for (std::size_t k = 0; k < cr.violation_frequency[j].size(); ++k) {
        out << k << "," << cr.name << "," << j << ","
            << cr.violation_frequency[j][k] << "\n";
      }
    }
  }
}

inline void write_summary_csv(const SimulationReport& report,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.precision(17);
  out << "controller,avg_cost_raw,avg_cost_normalized,max_violation,infeasible_count\n";
  for (const auto& cr : report.controllers) {
    out << cr.name << "," << cr.avg_cost_raw << "," << cr.avg_cost_normalized
        << "," << cr.max_violation << "," << cr.infeasible_count << "\n";
  }
}

}  // namespace iofsmpc
