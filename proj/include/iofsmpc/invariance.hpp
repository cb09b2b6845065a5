#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "iofsmpc/core.hpp"
#include "iofsmpc/qp.hpp"

namespace iofsmpc {

class EmptySetError : public Error {
 public:
  explicit EmptySetError(const std::string& msg) : Error("empty set: " + msg) {}
};

class MaxIterations : public Error {
 public:
  explicit MaxIterations(const std::string& msg) : Error("max iterations: " + msg) {}
};

// {z : Fz <= f} with unit-norm rows.
struct Polytope {
  Matrix F;
  Vector f;

  Eigen::Index dim() const { return F.cols(); }
  Eigen::Index num_rows() const { return F.rows(); }

  bool contains(const Vector& z, double tol = 1e-9) const {
    return ((F * z - f).array() <= tol).all();
  }
};

// One tightened half-space h'z <= bound.
struct TightenedRow {
  Vector h;
  double bound;
};

namespace invdetail {

// Support function max c'z over {Fz <= f}, computed as the minimizer of
// 1/2|z|^2 - T c'z clipped by the polytope. Accurate to ~diam^2/(2T).
inline double support(const Matrix& F, const Vector& f, const Vector& c) {
  constexpr double kPull = 1e8;
  QuadraticProgram qp;
  const auto n = F.cols();
  qp.H = Matrix::Identity(n, n);
  qp.g = -kPull * c;
  qp.A_ineq = F;
  qp.b_ineq = f;
  const QpSolution sol = solve_qp(qp);
  if (sol.status == QpStatus::Infeasible) {
    throw EmptySetError("support function of empty polytope");
  }
  if (sol.status != QpStatus::Optimal) {
    throw NumericalBreakdown("support function QP did not converge");
  }
  return c.dot(sol.x_star);
}

inline bool duplicate_dominated(const Matrix& F, const Vector& f, const Vector& row,
                                double rhs) {
  for (Eigen::Index i = 0; i < F.rows(); ++i) {
    if ((F.row(i).transpose() - row).norm() <= 1e-9 && f(i) <= rhs + 1e-9) {
      return true;
    }
  }
  return false;
}

// Deterministic direction sampler for the invariance spot check.
inline Vector sample_direction(Eigen::Index n, std::uint64_t& state) {
  Vector d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    d(i) = static_cast<double>(z) / static_cast<double>(UINT64_MAX) - 0.5;
  }
  if (d.norm() == 0.0) d(0) = 1.0;
  return d / d.norm();
}

}  // namespace invdetail

// Maximal positively invariant set for z+ = A_K z inside the infinity-step
// tightened constraints, with the terminal law pi_f(z) = Kz folding input
// constraints into state space. A symmetric box |z_i| <= box_bound is added
// so every support LP is bounded; the result is the MPI set of the boxed
// constraint region.
inline Polytope compute_mpi_set(const Matrix& A_K,
                                const std::vector<TightenedRow>& state_rows,
                                const std::vector<TightenedRow>& input_rows,
                                const Matrix& K, int max_iter = 200,
                                double box_bound = 100.0) {
  const auto n = A_K.rows();
  if (A_K.cols() != n) throw DimensionMismatch("compute_mpi_set: A_K square");
  if (spectral_radius(A_K) >= 1.0) {
    throw PreconditionViolated("compute_mpi_set: A_K must be stable");
  }

  // Assemble and normalize the base rows.
  std::vector<std::pair<Vector, double>> base;
  for (const auto& row : state_rows) {
    base.emplace_back(row.h, row.bound);
  }
  for (const auto& row : input_rows) {
    base.emplace_back(K.transpose() * row.h, row.bound);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector e = Vector::Zero(n);
    e(i) = 1.0;
    base.emplace_back(e, box_bound);
    base.emplace_back(-e, box_bound);
  }
  Matrix F0(static_cast<Eigen::Index>(base.size()), n);
  Vector f0(static_cast<Eigen::Index>(base.size()));
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double norm = base[i].first.norm();
    if (norm < 1e-12) throw DomainError("compute_mpi_set: zero constraint row");
    F0.row(static_cast<Eigen::Index>(i)) = base[i].first.transpose() / norm;
    f0(static_cast<Eigen::Index>(i)) = base[i].second / norm;
    if (f0(static_cast<Eigen::Index>(i)) <= 0.0) {
      throw EmptySetError("tightened constraints exclude the origin");
    }
  }

  Matrix F = F0;
  Vector f = f0;
  // Redundancy needs strict slack to absorb the support-function bias.
  const double slack = 1e-3;
  Matrix power = A_K;  // A_K^{t+1}
  bool converged = false;
  for (int t = 0; t < max_iter; ++t) {
    std::vector<std::pair<Vector, double>> fresh;
    for (Eigen::Index i = 0; i < F0.rows(); ++i) {
      Vector row = power.transpose() * F0.row(i).transpose();
      const double norm = row.norm();
      if (norm < 1e-12) continue;  // power has decayed in this direction
      row /= norm;
      const double rhs = f0(i) / norm;
      if (invdetail::duplicate_dominated(F, f, row, rhs)) continue;
      if (invdetail::support(F, f, row) <= rhs - slack) continue;
      fresh.emplace_back(std::move(row), rhs);
    }
    if (fresh.empty()) {
      converged = true;
      break;
    }
    Matrix F_next(F.rows() + static_cast<Eigen::Index>(fresh.size()), n);
    Vector f_next(F.rows() + static_cast<Eigen::Index>(fresh.size()));
    F_next.topRows(F.rows()) = F;
    f_next.head(F.rows()) = f;
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      F_next.row(F.rows() + static_cast<Eigen::Index>(i)) = fresh[i].first.transpose();
      f_next(F.rows() + static_cast<Eigen::Index>(i)) = fresh[i].second;
    }
    F = std::move(F_next);
    f = std::move(f_next);
    power = power * A_K;
  }
  if (!converged) {
    throw MaxIterations("MPI iteration not finitely determined within " +
                        std::to_string(max_iter) + " steps (rows: " +
                        std::to_string(F.rows()) + ")");
  }

  // Drop clearly redundant rows (conservative: only with strict slack).
  // Sequential elimination so mutually redundant rows are not both removed.
  std::vector<bool> dropped(static_cast<std::size_t>(F.rows()), false);
  for (Eigen::Index i = 0; i < F.rows(); ++i) {
    Eigen::Index rest_count = 0;
    for (Eigen::Index j = 0; j < F.rows(); ++j) {
      if (j != i && !dropped[static_cast<std::size_t>(j)]) ++rest_count;
    }
    if (rest_count == 0) continue;
    Matrix F_rest(rest_count, n);
    Vector f_rest(rest_count);
    Eigen::Index w = 0;
    for (Eigen::Index j = 0; j < F.rows(); ++j) {
      if (j == i || dropped[static_cast<std::size_t>(j)]) continue;
      F_rest.row(w) = F.row(j);
      f_rest(w) = f(j);
      ++w;
    }
    if (invdetail::support(F_rest, f_rest, F.row(i).transpose()) <= f(i) - slack) {
      dropped[static_cast<std::size_t>(i)] = true;
    }
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < F.rows(); ++i) {
    if (!dropped[static_cast<std::size_t>(i)]) keep.push_back(i);
  }
  Polytope poly;
  poly.F = Matrix(static_cast<Eigen::Index>(keep.size()), n);
  poly.f = Vector(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    poly.F.row(static_cast<Eigen::Index>(i)) = F.row(keep[i]);
    poly.f(static_cast<Eigen::Index>(i)) = f(keep[i]);
  }

  // Spot check invariance on sampled boundary points.
  std::uint64_t rng_state = 0x5bd1e995u;
  for (int s = 0; s < 100; ++s) {
    const Vector d = invdetail::sample_direction(n, rng_state);
    double t_max = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < poly.F.rows(); ++i) {
      const double fd = poly.F.row(i).dot(d);
      if (fd > 1e-12) t_max = std::min(t_max, poly.f(i) / fd);
    }
    if (!std::isfinite(t_max)) continue;
    const Vector z = t_max * d;
    if (((poly.F * (A_K * z) - poly.f).array() > 1e-9).any()) {
      throw Error("compute_mpi_set: invariance spot check failed");
    }
  }
  return poly;
}

inline void write_polytope(const Polytope& poly, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.precision(17);
  out << "polytope " << poly.num_rows() << " " << poly.dim() << "\n";
  for (Eigen::Index i = 0; i < poly.num_rows(); ++i) {
    out << poly.f(i);
    for (Eigen::Index j = 0; j < poly.dim(); ++j) {
      out << " " << poly.F(i, j);
    }
    out << "\n";
  }
}

inline Polytope read_polytope(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string tag;
  Eigen::Index m = 0, n = 0;
  in >> tag >> m >> n;
  if (tag != "polytope" || m < 0 || n <= 0) {
    throw Error("malformed polytope file: " + path);
  }
  Polytope poly;
  poly.F = Matrix(m, n);
  poly.f = Vector(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    in >> poly.f(i);
    for (Eigen::Index j = 0; j < n; ++j) {
      in >> poly.F(i, j);
    }
  }
  if (!in) throw Error("truncated polytope file: " + path);
  return poly;
}

}  // namespace iofsmpc
