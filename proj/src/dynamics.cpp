#include "pendlab/dynamics.hpp"

#include <algorithm>

namespace pendlab {

Eigen::Matrix2d mass_matrix(const Eigen::Vector2d& q, const PlantParams& params) {
  const auto mb = detail::mass_bias<double>(q[0], q[1], 0.0, 0.0, params);
  Eigen::Matrix2d m;
  m << mb.m11, mb.m12, mb.m12, mb.m22;
  return m;
}

Eigen::Vector2d bias_terms(const Eigen::Vector2d& q, const Eigen::Vector2d& qd,
                           const PlantParams& params) {
  const auto mb = detail::mass_bias<double>(q[0], q[1], qd[0], qd[1], params);
  return {mb.n1, mb.n2};
}

Eigen::Vector2d forward_dynamics(const JointState& state, double u,
                                 const PlantParams& params, bool* clamped) {
  const double um = params.torque_limit;
  const double uc = std::clamp(u, -um, um);
  if (clamped) *clamped = (uc != u);
  Eigen::Vector2d qdd;
  detail::accel<double>(state.q[0], state.q[1], state.qd[0], state.qd[1], uc, params,
                        &qdd[0], &qdd[1]);
  return qdd;
}

JointState rk4_step(const JointState& state, double u, double dt,
                    const PlantParams& params, bool* clamped) {
  if (!(dt > 0)) throw std::invalid_argument("rk4_step: dt must be positive");
  const double um = params.torque_limit;
  const double uc = std::clamp(u, -um, um);
  if (clamped) *clamped = (uc != u);

  struct Deriv {
    Eigen::Vector2d dq;
    Eigen::Vector2d dqd;
  };
  auto f = [&](const JointState& s) -> Deriv {
    Eigen::Vector2d qdd;
    detail::accel<double>(s.q[0], s.q[1], s.qd[0], s.qd[1], uc, params, &qdd[0], &qdd[1]);
    return {s.qd, qdd};
  };

  const Deriv k1 = f(state);
  JointState s2{state.q + 0.5 * dt * k1.dq, state.qd + 0.5 * dt * k1.dqd};
  const Deriv k2 = f(s2);
  JointState s3{state.q + 0.5 * dt * k2.dq, state.qd + 0.5 * dt * k2.dqd};
  const Deriv k3 = f(s3);
  JointState s4{state.q + dt * k3.dq, state.qd + dt * k3.dqd};
  const Deriv k4 = f(s4);

  JointState out;
  out.q = state.q + (dt / 6.0) * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
  out.qd = state.qd + (dt / 6.0) * (k1.dqd + 2.0 * k2.dqd + 2.0 * k3.dqd + k4.dqd);
  return out;
}

double total_energy(const JointState& state, const PlantParams& p) {
  const Eigen::Matrix2d m = mass_matrix(state.q, p);
  const double kinetic = 0.5 * state.qd.dot(m * state.qd);
  // com heights above their hanging positions
  const double lift1 = 1.0 - std::cos(state.q[0]);
  const double lift12 = 1.0 - std::cos(state.q[0] + state.q[1]);
  const double potential =
      p.m1 * p.g * (p.r1 * lift1) + p.m2 * p.g * (p.l1 * lift1 + p.r2 * lift12);
  return kinetic + potential;
}

double wrap_angle(double q) {
  if (!std::isfinite(q)) throw std::invalid_argument("wrap_angle: non-finite input");
  const double two_pi = 6.283185307179586476925286766559;
  double w = std::remainder(q, two_pi);  // (-pi, pi) with ties to even
  if (w <= -3.14159265358979323846) w += two_pi;
  return w;
}

}  // namespace pendlab
