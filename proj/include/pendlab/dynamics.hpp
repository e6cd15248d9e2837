// Ground-truth double-pendulum physics: standard two-link manipulator model
// with torque on either the shoulder (pendubot) or elbow (acrobot) joint.
// Angles are measured from the hanging configuration, q2 relative to link 1.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pendlab {

enum class RobotVariant { kPendubot, kAcrobot };

inline std::string to_string(RobotVariant v) {
  return v == RobotVariant::kPendubot ? "pendubot" : "acrobot";
}

inline RobotVariant variant_from_string(const std::string& s) {
  if (s == "pendubot") return RobotVariant::kPendubot;
  if (s == "acrobot") return RobotVariant::kAcrobot;
  throw std::invalid_argument("unknown robot variant: " + s);
}

struct PlantParams {
  double m1 = 0.6;   // link masses [kg]
  double m2 = 0.6;
  double l1 = 0.3;   // link lengths [m]
  double l2 = 0.2;
  double r1 = 0.25;  // center-of-mass distances [m]
  double r2 = 0.16;
  double I1 = 0.02;   // rotational inertias about the com [kg m^2]
  double I2 = 0.006;
  double b1 = 0.0;  // viscous damping [N m s/rad]
  double b2 = 0.0;
  double g = 9.81;        // gravity [m/s^2]
  double torque_limit = 3.0;  // u_M [N m]
  RobotVariant variant = RobotVariant::kPendubot;

  int actuated_joint() const { return variant == RobotVariant::kPendubot ? 0 : 1; }

  void validate() const {
    if (!(m1 > 0 && m2 > 0 && l1 > 0 && l2 > 0 && r1 > 0 && r2 > 0 && I1 > 0 && I2 > 0))
      throw std::invalid_argument("plant masses, lengths and inertias must be positive");
    if (b1 < 0 || b2 < 0) throw std::invalid_argument("plant damping must be non-negative");
    if (!(torque_limit > 0)) throw std::invalid_argument("torque limit must be positive");
  }
};

struct JointState {
  Eigen::Vector2d q = Eigen::Vector2d::Zero();   // [rad]
  Eigen::Vector2d qd = Eigen::Vector2d::Zero();  // [rad/s]

  bool finite() const { return q.allFinite() && qd.allFinite(); }
};

// Scalar-generic core shared by the plain and derivative-tracked paths, so the
// GP prior mean is the forward dynamics by construction rather than by test.
namespace detail {

template <class S>
struct MassBias {
  S m11, m12;   // mass matrix entries (symmetric)
  double m22;   // configuration-independent
  S n1, n2;     // Coriolis + gravity + damping
};

// Constants are always combined with an S operand so the same code works for
// plain doubles and tape variables.
template <class S>
MassBias<S> mass_bias(const S& q1, const S& q2, const S& qd1, const S& qd2,
                      const PlantParams& p) {
  using std::cos;
  using std::sin;
  const S c2 = cos(q2);
  const S s2 = sin(q2);
  const S s1 = sin(q1);
  const S s12 = sin(q1 + q2);

  const double coupling = p.m2 * p.l1 * p.r2;
  MassBias<S> out;
  out.m22 = p.I2 + p.m2 * p.r2 * p.r2;
  out.m11 = (p.I1 + p.m1 * p.r1 * p.r1 + p.m2 * p.l1 * p.l1 + out.m22) + (2.0 * coupling) * c2;
  out.m12 = out.m22 + coupling * c2;

  const S h = coupling * s2;
  const S g1 = ((p.m1 * p.r1 + p.m2 * p.l1) * p.g) * s1 + (p.m2 * p.r2 * p.g) * s12;
  const S g2 = (p.m2 * p.r2 * p.g) * s12;
  out.n1 = -(h * (2.0 * (qd1 * qd2) + qd2 * qd2)) + g1 + p.b1 * qd1;
  out.n2 = h * (qd1 * qd1) + g2 + p.b2 * qd2;
  return out;
}

// qdd = M(q)^-1 (B u - n(q, qd)), with u on the actuated joint only.
template <class S>
void accel(const S& q1, const S& q2, const S& qd1, const S& qd2, const S& u,
           const PlantParams& p, S* qdd1, S* qdd2) {
  const MassBias<S> mb = mass_bias(q1, q2, qd1, qd2, p);
  const bool first_actuated = p.actuated_joint() == 0;
  const S rhs1 = first_actuated ? (u - mb.n1) : (-mb.n1);
  const S rhs2 = first_actuated ? (-mb.n2) : (u - mb.n2);
  const S det = mb.m11 * mb.m22 - mb.m12 * mb.m12;
  *qdd1 = (mb.m22 * rhs1 - mb.m12 * rhs2) / det;
  *qdd2 = (mb.m11 * rhs2 - mb.m12 * rhs1) / det;
}

}  // namespace detail

Eigen::Matrix2d mass_matrix(const Eigen::Vector2d& q, const PlantParams& params);

// n(q, qd) with B u = M(q) qdd + n(q, qd)
Eigen::Vector2d bias_terms(const Eigen::Vector2d& q, const Eigen::Vector2d& qd,
                           const PlantParams& params);

// Torque outside [-u_M, u_M] is clamped; pass `clamped` to observe it.
Eigen::Vector2d forward_dynamics(const JointState& state, double u,
                                 const PlantParams& params, bool* clamped = nullptr);

// Classical RK4 with zero-order-hold torque.
JointState rk4_step(const JointState& state, double u, double dt,
                    const PlantParams& params, bool* clamped = nullptr);

// Kinetic + gravitational potential energy, zero at the hanging rest state.
double total_energy(const JointState& state, const PlantParams& params);

// Reduce an angle to (-pi, pi].
double wrap_angle(double q);

}  // namespace pendlab
