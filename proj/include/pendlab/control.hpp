// Deployable controller: policy at 50 Hz with a damping fallback at high
// velocity (pendubot) and LQR stabilization with region-of-attraction
// switching (acrobot).
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "pendlab/dynamics.hpp"
#include "pendlab/policy.hpp"

namespace pendlab {

enum class ControllerMode { kPolicy, kDamping, kLqr };

std::string to_string(ControllerMode mode);

struct LqrStabilizer {
  Eigen::RowVector4d gain;         // K, torque = -K e
  Eigen::Matrix4d value;           // S, e^T S e is the switching form
  double rho = 0.0;                // enter LQR when e^T S e < rho
  double rho_exit = 0.0;           // leave LQR when e^T S e > rho_exit
};

struct DampingConfig {
  double gain = 0.5;             // D [N m s/rad]
  double enter_velocity = 20.0;  // [rad/s], max joint speed triggering damping
  double exit_velocity = 4.0;    // hysteresis return threshold
};

struct ControllerAssets {
  PlantParams plant;
  PolicyParams policy;
  DampingConfig damping;
  bool use_damping = true;  // pendubot fallback; unsolved for the acrobot
  std::optional<LqrStabilizer> lqr;
};

ControllerAssets make_controller_assets(const PlantParams& plant, PolicyParams policy);

struct ControlDecision {
  double torque = 0.0;  // clamped to [-u_M, u_M]
  ControllerMode mode = ControllerMode::kPolicy;
};

// One 50 Hz controller tick: resolves the mode transition for the measured
// state, then emits the active sub-controller's torque.
ControlDecision controller_step(const JointState& state, ControllerMode mode,
                                const ControllerAssets& assets);

// u = -D * qd on the actuated joint, clamped.
double damping_controller(const JointState& state, double d_gain, const PlantParams& params);

// Continuous-time Jacobians of [qd; qdd] at the upright equilibrium
// ([pi, 0], [0, 0]) with respect to state and input.
void linearize_at_goal(const PlantParams& params, Eigen::Matrix4d* a, Eigen::Vector4d* b_lin);

// Continuous algebraic Riccati equation A'S + SA - S B R^-1 B' S + Q = 0,
// solved by the matrix sign-function iteration and polished with
// Newton-Kleinman steps. Throws if the residual cannot reach `tol`.
Eigen::MatrixXd solve_care(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                           double tol = 1e-10);

struct LqrDesign {
  Eigen::RowVector4d gain;
  Eigen::Matrix4d value;
  double residual = 0.0;
};

LqrDesign lqr_gain(const Eigen::Matrix4d& a, const Eigen::Vector4d& b_lin,
                   const Eigen::Matrix4d& q, double r);

// Wrapped state error to the upright goal [pi, 0, 0, 0].
Eigen::Vector4d goal_error(const JointState& state);

bool in_roa(const JointState& state, const LqrStabilizer& lqr);

// Largest rho (over a halving search from rho_max) for which at least
// `success_fraction` of `samples` states drawn uniformly in the sublevel set
// converge to the goal under closed-loop LQR simulation.
double calibrate_roa(const PlantParams& params, const LqrDesign& design, std::uint64_t seed,
                     int samples = 100, double success_fraction = 0.95, double rho_max = 100.0,
                     double sim_duration = 5.0, double sim_dt = 0.002);

void save_lqr_json(const LqrStabilizer& lqr, const std::string& path);
LqrStabilizer load_lqr_json(const std::string& path);

}  // namespace pendlab
