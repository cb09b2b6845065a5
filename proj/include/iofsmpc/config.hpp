#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iofsmpc/core.hpp"
#include "iofsmpc/pipeline.hpp"
#include "iofsmpc/presets.hpp"

namespace iofsmpc {

namespace cfgdetail {

using nlohmann::json;

inline Matrix parse_matrix(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) {
    throw ConfigError(field + ": expected a non-empty array");
  }
  if (j[0].is_array()) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!j[static_cast<std::size_t>(r)].is_array() ||
          static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols) {
        throw ConfigError(field + ": ragged matrix rows");
      }
      for (Eigen::Index c = 0; c < cols; ++c) {
        m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]
                      .get<double>();
      }
    }
    return m;
  }
  // flat list -> column vector / 1x1
  Matrix m(static_cast<Eigen::Index>(j.size()), 1);
  for (std::size_t i = 0; i < j.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = j[i].get<double>();
  return m;
}

inline Vector parse_vector(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

}  // namespace cfgdetail

// Loads an experiment from a JSON config. Either a full problem description
// or a named preset with optional experiment overrides:
//   {"preset": "paper-zero-mean", "experiment": {"trajectories": 1000}}
inline ExperimentSetup load_experiment(const std::string& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("parse failure in ") + path + ": " + e.what());
  }

  std::optional<ExperimentSetup> setup;
  if (j.contains("preset")) {
    const std::string preset = j["preset"].get<std::string>();
    if (preset == "paper-zero-mean") {
      PaperExample ex = build_paper_example();
      setup = ExperimentSetup{ex.sys, ex.weights, ex.constraints, {},
                              ex.tube_Q_aggressive, std::nullopt};
    } else if (preset == "paper-nonzero-mean") {
      PaperExample ex = build_paper_example(paper_nonzero_mean());
      setup = ExperimentSetup{ex.sys, ex.weights, ex.constraints, {},
                              ex.tube_Q_aggressive, std::nullopt};
    } else {
      throw ConfigError("unknown preset: " + preset);
    }
  } else {
    if (!j.contains("system") || !j.contains("cost")) {
      throw ConfigError("config needs either a preset or system+cost sections");
    }
    const auto& js = j["system"];
    for (const char* field : {"A", "B", "C", "sigma_wx", "sigma_wy", "mu_x0", "sigma_x0"}) {
      if (!js.contains(field)) throw ConfigError(std::string("system.") + field + " missing");
    }
    LinearGaussianSystem sys(
        cfgdetail::parse_matrix(js["A"], "system.A"),
        cfgdetail::parse_matrix(js["B"], "system.B"),
        cfgdetail::parse_matrix(js["C"], "system.C"),
        cfgdetail::parse_matrix(js["sigma_wx"], "system.sigma_wx"),
        cfgdetail::parse_matrix(js["sigma_wy"], "system.sigma_wy"),
        cfgdetail::parse_vector(js["mu_x0"], "system.mu_x0"),
        cfgdetail::parse_matrix(js["sigma_x0"], "system.sigma_x0"));
    const auto& jc = j["cost"];
    const Matrix Q = cfgdetail::parse_matrix(jc["Q"], "cost.Q");
    const Matrix R = cfgdetail::parse_matrix(jc["R"], "cost.R");
    const Matrix P = solve_dare(sys.A, sys.B, Q, R);
    CostWeights weights(Q, R, P);
    std::vector<HalfspaceChanceConstraint> constraints;
    if (j.contains("constraints")) {
      for (const auto& con : j["constraints"]) {
        const std::string kind = con.value("kind", "state");
        constraints.emplace_back(
            cfgdetail::parse_vector(con["h"], "constraints.h"),
            con["p"].get<double>(),
            kind == "input" ? ConstraintKind::Input : ConstraintKind::State);
      }
    }
    std::optional<Matrix> tube_Q, tube_R;
    if (jc.contains("tube_Q")) tube_Q = cfgdetail::parse_matrix(jc["tube_Q"], "cost.tube_Q");
    if (jc.contains("tube_R")) tube_R = cfgdetail::parse_matrix(jc["tube_R"], "cost.tube_R");
    setup = ExperimentSetup{std::move(sys), std::move(weights),
                            std::move(constraints), {}, tube_Q, tube_R};
  }

  ExperimentConfig cfg;
  if (j.contains("experiment")) {
    const auto& je = j["experiment"];
    cfg.horizon = je.value("horizon", cfg.horizon);
    cfg.sim_steps = je.value("sim_steps", cfg.sim_steps);
    cfg.num_trajectories = je.value("trajectories", cfg.num_trajectories);
    cfg.master_seed = je.value("seed", cfg.master_seed);
    if (je.contains("controllers")) {
      cfg.controllers = je["controllers"].get<std::vector<std::string>>();
    }
    const std::string mode = je.value("terminal_mode", "mpi");
    if (mode == "mpi") {
      cfg.terminal_mode = TerminalMode::MpiSet;
    } else if (mode == "none") {
      cfg.terminal_mode = TerminalMode::None;
    } else {
      throw ConfigError("experiment.terminal_mode must be 'mpi' or 'none'");
    }
    cfg.measure_at_t0 = je.value("measure_at_t0", false);
  }
  cfg.validate();
  setup->config = cfg;
  return *setup;
}

// FNV-1a, used for config hashes and output checksums in the run manifest.
inline std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a(ss.str());
}

struct RunManifest {
  std::uint64_t config_hash = 0;
  std::string version = "iofsmpc 0.1.0";
  std::uint64_t resolved_seed = 0;
  double wall_seconds = 0.0;
  std::vector<std::pair<std::string, std::uint64_t>> outputs;  // path, checksum

  void write(const std::string& path) const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["version"] = version;
    j["resolved_seed"] = resolved_seed;
    j["wall_seconds"] = wall_seconds;
    for (const auto& [file, sum] : outputs) {
      j["outputs"].push_back({{"file", file}, {"checksum", sum}});
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
  }
};

}  // namespace iofsmpc
