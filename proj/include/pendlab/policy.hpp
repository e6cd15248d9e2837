// Squashed radial-basis-function policy over the feature map
// [qd1, qd2, cos q1, cos q2, sin q1, sin q2]. The squared feature distance is
// weighted by Sigma_pi = L^T L, with the factor L kept as the free parameter so
// Sigma_pi stays positive semidefinite under gradient steps.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>

#include "pendlab/dynamics.hpp"
#include "pendlab/rng.hpp"
#include "pendlab/tape.hpp"

namespace pendlab {

inline constexpr int kFeatureDim = 6;

struct PolicyParams {
  Eigen::VectorXd weights;  // [N m], one per basis function
  Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor> centers;
  Eigen::Matrix<double, kFeatureDim, kFeatureDim> l_factor;  // Sigma_pi = L^T L
  double u_max = 3.0;

  int n_basis() const { return static_cast<int>(weights.size()); }
  int n_params() const { return n_basis() * (1 + kFeatureDim) + kFeatureDim * kFeatureDim; }
};

struct PolicyConfig {
  int n_basis = 200;
  double u_max = 3.0;
  double velocity_range = 6.283185307179586;  // center qd entries ~ U(-2pi, 2pi)
};

Eigen::Matrix<double, kFeatureDim, 1> feature_map(const JointState& state);

// u_M tanh( sum_i (w_i/u_M) exp(-||a_i - phi(x)||^2_{Sigma_pi}) ); |u| < u_M strictly.
double policy_eval(const PolicyParams& params, const JointState& state);

// Weights ~ U(-u_M, u_M); center velocities ~ U(-vel_range, vel_range); center
// trig pairs from angles ~ U(-pi, pi]; L = I.
PolicyParams init_policy(std::uint64_t seed, const PolicyConfig& config);

// Per-weight inverted-dropout factors: 0 with probability `rate`, else 1/(1-rate).
Eigen::VectorXd dropout_mask(int n, double rate, Rng& rng);

// Returns a copy with masked weights; centers and L are untouched.
PolicyParams apply_dropout(const PolicyParams& params, double rate, Rng& rng);

// Flat parameter layout: [w, centers row-major, L row-major].
Eigen::VectorXd flatten_params(const PolicyParams& params);
PolicyParams unflatten_params(const Eigen::VectorXd& flat, int n_basis, double u_max);

void save_policy_json(const PolicyParams& params, const std::string& path);
PolicyParams load_policy_json(const std::string& path);

// Tape leaves for the flat layout, as pushed by the optimizer. Parameter
// values are read off the tape, so dropout-scaled weight nodes work unchanged.
struct PolicyVars {
  std::span<const Var> weights;  // n_basis entries (possibly dropout-scaled nodes)
  std::span<const Var> centers;  // n_basis * 6, row-major
  std::span<const Var> l_factor;  // 36, row-major
};

// Fused policy evaluation: records one tape node whose partials cover the four
// state entries and every policy parameter.
Var policy_eval_var(Tape& tape, double u_max, const PolicyVars& vars,
                    Var q1, Var q2, Var qd1, Var qd2);

}  // namespace pendlab
