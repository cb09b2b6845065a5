#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace iofsmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error hierarchy. All numerical modules throw subclasses of Error so the CLI
// can map them onto exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& msg)
      : Error("dimension mismatch: " + msg) {}
};

class NotPsdError : public Error {
 public:
  explicit NotPsdError(const std::string& matrix_name)
      : Error("matrix not positive (semi)definite: " + matrix_name),
        matrix_name_(matrix_name) {}
  const std::string& matrix_name() const { return matrix_name_; }

 private:
  std::string matrix_name_;
};

class PreconditionViolated : public Error {
 public:
  explicit PreconditionViolated(const std::string& msg)
      : Error("precondition violated: " + msg) {}
};

class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& what, int iterations, double residual)
      : Error(what + ": no convergence after " + std::to_string(iterations) +
              " iterations, residual " + std::to_string(residual)),
        iterations(iterations),
        residual(residual) {}
  int iterations;
  double residual;
};

class UnstableDynamics : public Error {
 public:
  explicit UnstableDynamics(const std::string& msg)
      : Error("unstable dynamics: " + msg) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

inline double relative_asymmetry(const Matrix& m) {
  const double scale = m.norm();
  if (scale == 0.0) return 0.0;
  return (m - m.transpose()).norm() / scale;
}

// Symmetrizes m in place when its asymmetry is below `tol` relative, throws
// otherwise. File round-trips and accumulated arithmetic leave asymmetry well
// below 1e-12; anything larger indicates bad input.
inline Matrix symmetrized(const Matrix& m, const std::string& name,
                          double tol = 1e-12) {
  if (m.rows() != m.cols()) {
    throw DimensionMismatch(name + " must be square");
  }
  if (relative_asymmetry(m) > tol) {
    throw NotPsdError(name + " (not symmetric)");
  }
  return 0.5 * (m + m.transpose());
}

inline bool is_positive_definite(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

inline void require_spd(const Matrix& m, const std::string& name) {
  Matrix s = symmetrized(m, name);
  if (!is_positive_definite(s)) {
    throw NotPsdError(name);
  }
}

inline double spectral_radius(const Matrix& m) {
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace iofsmpc
