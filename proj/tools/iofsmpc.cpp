// Command-line front end: offline synthesis, Monte Carlo campaigns, and a
// built-in verification suite.
//
// Exit codes: 0 success, 2 configuration error, 3 synthesis error,
// 4 runtime infeasibility in strict mode, 1 other failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include <iofsmpc/iofsmpc.hpp>

using namespace iofsmpc;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int trajectories = 0;
  std::string controllers;
  int horizon = 0;
  std::string terminal;
  int parallel = 0;
  bool strict = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

ExperimentSetup load_setup(const CommonFlags& flags) {
  if (flags.config_path.empty()) {
    throw ConfigError("--config is required");
  }
  ExperimentSetup setup = load_experiment(flags.config_path);
  if (flags.seed_set) setup.config.master_seed = flags.seed;
  if (flags.trajectories > 0) setup.config.num_trajectories = flags.trajectories;
  if (flags.horizon > 0) setup.config.horizon = flags.horizon;
  if (!flags.controllers.empty()) {
    setup.config.controllers = split_list(flags.controllers);
  }
  if (!flags.terminal.empty()) {
    if (flags.terminal == "mpi") {
      setup.config.terminal_mode = TerminalMode::MpiSet;
    } else if (flags.terminal == "none") {
      setup.config.terminal_mode = TerminalMode::None;
    } else {
      throw ConfigError("--terminal must be 'mpi' or 'none'");
    }
  }
  setup.config.validate();
  return setup;
}

std::vector<std::string> resolve_controllers(const ExperimentSetup& setup) {
  if (!setup.config.controllers.empty()) return setup.config.controllers;
  if (setup.tube_Q || setup.tube_R) {
    return {"lqg", "iof", "iof_aggressive", "df", "df_aggressive", "nominal"};
  }
  return {"lqg", "iof", "df", "nominal"};
}

void write_matrix_block(std::ostream& out, const std::string& name,
                        const Matrix& m) {
  out << name << " " << m.rows() << " " << m.cols() << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out << m(i, j) << (j + 1 == m.cols() ? "" : " ");
    }
    out << "\n";
  }
}

int run_synthesize(const CommonFlags& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentSetup setup = load_setup(flags);
  fs::create_directories(flags.out_dir);

  const auto report = validate_system(setup.sys, setup.weights.Q);
  if (!report.ok()) {
    throw PreconditionViolated(
        "system validation failed: stabilizable=" +
        std::to_string(report.stabilizable) +
        " detectable_Q=" + std::to_string(report.detectable_Q) +
        " detectable_C=" + std::to_string(report.detectable_C));
  }

  const TubeArtifacts art = pipedetail::build_tube_artifacts(
      setup, setup.tube_Q ? &*setup.tube_Q : nullptr,
      setup.tube_R ? &*setup.tube_R : nullptr);

  const double res_reg = dare_residual(setup.sys.A, setup.sys.B, setup.weights.Q,
                                       setup.weights.R, setup.weights.P);
  const double res_kal =
      kalman_riccati_residual(setup.sys.A, setup.sys.C, setup.sys.Sigma_wx,
                              setup.sys.Sigma_wy, art.bundle.P_hat);
  const CombinedErrorModel model =
      build_combined_error_model(setup.sys, art.bundle.K, art.bundle.L);
  const Matrix W = model.B_tilde * model.Sigma_wtilde * model.B_tilde.transpose();
  const double res_lyap =
      (art.bundle.Sigma_xi_inf -
       (model.A_tilde * art.bundle.Sigma_xi_inf * model.A_tilde.transpose() + W))
          .norm() /
      std::max(1.0, art.bundle.Sigma_xi_inf.norm());

  std::cout << "regulator Riccati residual:  " << res_reg << "\n"
            << "filter Riccati residual:     " << res_kal << "\n"
            << "stationary Lyapunov residual: " << res_lyap << "\n";

  const std::string gains_path = flags.out_dir + "/gains.txt";
  {
    std::ofstream out(gains_path);
    if (!out) throw Error("cannot open " + gains_path + " for writing");
    out.precision(17);
    write_matrix_block(out, "L", art.bundle.L);
    write_matrix_block(out, "K", art.bundle.K);
    write_matrix_block(out, "P", setup.weights.P);
    write_matrix_block(out, "P_hat", art.bundle.P_hat);
    write_matrix_block(out, "Sigma_xi_inf", art.bundle.Sigma_xi_inf);
  }
  const std::string sched_path = flags.out_dir + "/tightening.csv";
  write_schedule_csv(*art.schedule, sched_path);

  RunManifest manifest;
  manifest.config_hash = file_checksum(flags.config_path);
  manifest.resolved_seed = setup.config.master_seed;
  manifest.outputs.emplace_back(gains_path, file_checksum(gains_path));
  manifest.outputs.emplace_back(sched_path, file_checksum(sched_path));
  if (art.terminal) {
    const std::string poly_path = flags.out_dir + "/terminal.poly";
    write_polytope(*art.terminal, poly_path);
    manifest.outputs.emplace_back(poly_path, file_checksum(poly_path));
    std::cout << "terminal set rows: " << art.terminal->num_rows() << "\n";
  }
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest.write(flags.out_dir + "/manifest.json");
  std::cout << "wrote " << flags.out_dir << "/{gains.txt, tightening.csv"
            << (art.terminal ? ", terminal.poly" : "") << ", manifest.json}\n";
  return 0;
}

int run_simulate(const CommonFlags& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentSetup setup = load_setup(flags);
  fs::create_directories(flags.out_dir);

  const std::vector<std::string> names = resolve_controllers(setup);
  const auto controllers = build_controllers(setup, names);
  const Matrix L = campaign_kalman_gain(setup);

  SimulationSettings settings;
  settings.sim_steps = setup.config.sim_steps;
  settings.measure_at_t0 = setup.config.measure_at_t0;
  settings.strict = flags.strict;
  settings.parallelism =
      flags.parallel > 0
          ? flags.parallel
          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  const auto report =
      run_campaign(setup.sys, controllers, L, setup.weights, setup.constraints,
                   setup.config.num_trajectories, setup.config.master_seed,
                   settings);

  const std::string summary_path = flags.out_dir + "/summary.csv";
  const std::string violations_path = flags.out_dir + "/violations.csv";
  write_summary_csv(report, summary_path);
  write_violation_csv(report, violations_path);

  std::cout << std::left << std::setw(16) << "controller" << std::right
            << std::setw(16) << "avg cost" << std::setw(14) << "cost/step"
            << std::setw(14) << "max viol %" << std::setw(12) << "infeasible"
            << "\n";
  for (const auto& cr : report.controllers) {
    std::cout << std::left << std::setw(16) << cr.name << std::right
              << std::setw(16) << std::fixed << std::setprecision(1)
              << cr.avg_cost_raw << std::setw(14) << std::setprecision(2)
              << cr.avg_cost_normalized << std::setw(13) << std::setprecision(1)
              << 100.0 * cr.max_violation << "%" << std::setw(12)
              << cr.infeasible_count << "\n";
    std::cout.unsetf(std::ios::fixed);
  }

  RunManifest manifest;
  manifest.config_hash = file_checksum(flags.config_path);
  manifest.resolved_seed = setup.config.master_seed;
  manifest.outputs.emplace_back(summary_path, file_checksum(summary_path));
  manifest.outputs.emplace_back(violations_path, file_checksum(violations_path));
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest.write(flags.out_dir + "/manifest.json");
  return 0;
}

int run_verify(int samples, int qp_trials) {
  int failed = 0;
  auto check = [&](bool ok, const std::string& what, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << " - " << what;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    if (!ok) ++failed;
  };

  // Riccati fixed-point oracles on the benchmark system.
  {
    const PaperExample ex = build_paper_example();
    Matrix P_oracle = ex.weights.P;
    {
      // damped fixed-point iteration, independent of the doubling solver
      Matrix P = ex.weights.Q;
      for (int i = 0; i < 100000; ++i) {
        const Matrix S = ex.weights.R + ex.sys.B.transpose() * P * ex.sys.B;
        const Matrix next =
            ex.sys.A.transpose() * P * ex.sys.A -
            ex.sys.A.transpose() * P * ex.sys.B *
                S.ldlt().solve(ex.sys.B.transpose() * P * ex.sys.A) +
            ex.weights.Q;
        if ((next - P).norm() < 1e-15 * std::max(1.0, next.norm())) {
          P = next;
          break;
        }
        P = 0.5 * (next + next.transpose());
      }
      P_oracle = P;
    }
    const double dev = (ex.weights.P - P_oracle).norm() / P_oracle.norm();
    check(dev <= 1e-6, "regulator Riccati vs fixed-point oracle",
          "relative deviation " + std::to_string(dev));
  }

  // Quantile bisection.
  {
    auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    double lo = -40.0, hi = 40.0;
    const double target = 0.5 * (1.0 + 0.68);
    while (hi - lo > 1e-13) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < target ? lo : hi) = mid;
    }
    const double z = 0.5 * (lo + hi);
    const double oracle = z * z;
    const double dev = std::abs(chi2_quantile_1dof(0.68) - oracle);
    check(dev <= 1e-7, "chi-squared quantile vs bisection",
          "deviation " + std::to_string(dev));
  }

  // Monte Carlo calibration of the tightened bound; tolerance widens with
  // smaller sample counts following the binomial standard error.
  {
    const PaperExample ex = build_paper_example();
    const auto model =
        build_combined_error_model(ex.sys, ex.bundle.K, ex.bundle.L);
    const auto covs = propagate_covariance(model, 5);
    const Vector& h = ex.constraints[0].h;
    const double p = ex.constraints[0].p;
    const double tol =
        0.005 * std::sqrt(1.0e6 / std::max(1, samples)) + 1e-12;
    const Matrix Sx0_sqrt = Matrix(Eigen::LLT<Matrix>(ex.sys.Sigma_x0).matrixL());
    const Matrix A_e = ex.sys.A + ex.sys.B * ex.bundle.K;
    const Matrix BK = ex.sys.B * ex.bundle.K;
    const Matrix A_d = ex.sys.A - ex.bundle.L * ex.sys.C * ex.sys.A;
    const Matrix ILC = Matrix::Identity(4, 4) - ex.bundle.L * ex.sys.C;
    const double sd_wy = std::sqrt(ex.sys.Sigma_wy(0, 0));
    std::vector<long> hit(6, 0);
    std::vector<double> c(6);
    for (int k = 0; k <= 5; ++k) {
      const auto [Se, Stb] =
          marginal_covariances(covs[static_cast<std::size_t>(k)], ex.bundle.K);
      c[static_cast<std::size_t>(k)] = detail::tightening_value(p, h, Se);
    }
    for (int t = 0; t < samples; ++t) {
      NoiseStream stream(5551212, static_cast<std::uint64_t>(t));
      Vector e = Sx0_sqrt * stream.normal_vector(4);
      Vector delta = e;
      for (int k = 0; k <= 5; ++k) {
        if (h.dot(e) <= c[static_cast<std::size_t>(k)]) ++hit[static_cast<std::size_t>(k)];
        if (k == 5) break;
        const Vector wx = ex.sys.B * Vector::Constant(1, stream.normal());
        const Vector wy = Vector::Constant(1, sd_wy * stream.normal());
        const Vector e_next = A_e * e - BK * delta + wx;
        delta = A_d * delta + ILC * wx - ex.bundle.L * wy;
        e = e_next;
      }
    }
    double worst = 0.0;
    for (int k = 0; k <= 5; ++k) {
      const double rate = static_cast<double>(hit[static_cast<std::size_t>(k)]) / samples;
      worst = std::max(worst, std::abs(rate - p));
    }
    check(worst <= tol, "bound calibration Monte Carlo",
          "worst |rate-p| " + std::to_string(worst) + ", tolerance " +
              std::to_string(tol));
  }

  // QP solver against brute-force KKT enumeration.
  {
    std::uint64_t state = 0xabcdef12u;
    auto uni = [&state]() {
      state += 0x9E3779B97F4A7C15ull;
      std::uint64_t z = state;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
      z ^= z >> 31;
      return (static_cast<double>(z >> 11) + 0.5) * 0x1.0p-53;
    };
    int bad = 0;
    for (int trial = 0; trial < qp_trials; ++trial) {
      const int n = 1 + static_cast<int>(uni() * 3.0);
      const int m = 1 + static_cast<int>(uni() * 5.0);
      Matrix M(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = 2.0 * uni() - 1.0;
      QuadraticProgram qp;
      qp.H = M * M.transpose() + 0.3 * Matrix::Identity(n, n);
      qp.g = Vector(n);
      for (int i = 0; i < n; ++i) qp.g(i) = 4.0 * uni() - 2.0;
      qp.A_ineq = Matrix(m, n);
      qp.b_ineq = Vector(m);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) qp.A_ineq(i, j) = 2.0 * uni() - 1.0;
        qp.b_ineq(i) = 2.0 * uni() - 0.5;
      }
      qp.A_eq = Matrix(0, n);
      qp.b_eq = Vector(0);
      const auto sol = solve_qp(qp);
      if (sol.status == QpStatus::Optimal) {
        const double kkt = std::max({sol.kkt_stationarity, sol.kkt_primal,
                                     sol.kkt_complementarity});
        if (kkt > 1e-6) ++bad;
      } else if (sol.status == QpStatus::MaxIter) {
        ++bad;
      }
    }
    check(bad == 0, "QP solver KKT residuals on random problems",
          std::to_string(bad) + " of " + std::to_string(qp_trials) + " failed");
  }

  std::cout << (failed == 0 ? "verification passed" : "verification FAILED")
            << "\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"indirect output-feedback stochastic MPC toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;
  int verify_samples = 1000000;
  int verify_qp_trials = 1000;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", flags.config_path,
                                "experiment config (JSON)");
    if (needs_config) opt->required();
    cmd->add_option("--out-dir", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "master seed override")
        ->each([&](const std::string&) { flags.seed_set = true; });
    cmd->add_option("--trajectories", flags.trajectories,
                    "trajectory count override");
    cmd->add_option("--controllers", flags.controllers,
                    "comma separated controller list");
    cmd->add_option("--horizon", flags.horizon, "prediction horizon override");
    cmd->add_option("--terminal", flags.terminal, "terminal mode: mpi or none");
    cmd->add_option("--parallel", flags.parallel, "worker thread count");
    cmd->add_flag("--strict", flags.strict,
                  "treat any infeasible trajectory as a fatal error");
  };

  auto* synth = app.add_subcommand("synthesize",
                                   "offline gains, covariances and tightening");
  add_common(synth, true);
  auto* sim = app.add_subcommand("simulate", "Monte Carlo closed-loop campaign");
  add_common(sim, true);
  auto* verify = app.add_subcommand("verify", "built-in oracle checks");
  verify->add_option("--samples", verify_samples,
                     "Monte Carlo sample count (tolerance scales accordingly)");
  verify->add_option("--qp-trials", verify_qp_trials, "random QP trial count");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synthesize(flags);
    if (sim->parsed()) return run_simulate(flags);
    return run_verify(verify_samples, verify_qp_trials);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const QpInfeasible& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return 4;
  } catch (const InfeasibleTightening& e) {
    std::cerr << "synthesis error: " << e.what() << "\n";
    return 3;
  } catch (const EmptySetError& e) {
    std::cerr << "synthesis error: " << e.what() << "\n";
    return 3;
  } catch (const MaxIterations& e) {
    std::cerr << "synthesis error: " << e.what() << "\n";
    return 3;
  } catch (const PreconditionViolated& e) {
    std::cerr << "synthesis error: " << e.what() << "\n";
    return 3;
  } catch (const NoConvergence& e) {
    std::cerr << "synthesis error: " << e.what() << "\n";
    return 3;
  } catch (const NotPsdError& e) {
    std::cerr << "synthesis error: " << e.what() << "\n";
    return 3;
  } catch (const SingularInnovation& e) {
    std::cerr << "synthesis error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
