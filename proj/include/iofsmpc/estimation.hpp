#pragma once

#include "iofsmpc/core.hpp"
#include "iofsmpc/model.hpp"

namespace iofsmpc {

// Steady-state Kalman filter state. The estimate at time k uses the
// measurement y(k); the simulator's event ordering must respect this.
struct FilterState {
  Vector x_hat;
  int k = 0;
};

inline FilterState make_filter_state(const LinearGaussianSystem& sys) {
  return FilterState{sys.mu_x0, 0};
}

// x_hat(k) = A x_hat(k-1) + B u(k-1) + L (y(k) - CA x_hat(k-1) - CB u(k-1)).
inline FilterState kf_update(const FilterState& state, const Vector& u_prev,
                             const Vector& y, const LinearGaussianSystem& sys,
                             const Matrix& L) {
  if (u_prev.size() != sys.nu()) throw DimensionMismatch("kf_update: u_prev");
  if (y.size() != sys.ny()) throw DimensionMismatch("kf_update: y");
  if (state.x_hat.size() != sys.nx()) throw DimensionMismatch("kf_update: x_hat");
  if (L.rows() != sys.nx() || L.cols() != sys.ny())
    throw DimensionMismatch("kf_update: L");
  const Vector predicted = sys.A * state.x_hat + sys.B * u_prev;
  const Vector innovation = y - sys.C * predicted;
  return FilterState{predicted + L * innovation, state.k + 1};
}

}  // namespace iofsmpc
