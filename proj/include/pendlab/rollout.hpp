// Monte-Carlo particle rollouts through the GP model under the RBF policy, and
// gradient-based policy improvement.
//
// Particles are processed in fixed blocks of kParticleBlock. Each block is an
// independent unit of work with its own derivative tape and batched GP
// queries, so the serial and OpenMP execution paths produce bit-identical
// results; threads only change which core runs a block.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "pendlab/gp_model.hpp"
#include "pendlab/policy.hpp"

namespace pendlab {

inline constexpr int kParticleBlock = 32;

enum class ExecMode { kSerial, kParallel };

// Uniform box U(-half_width, half_width) over [q1, q2, qd1, qd2].
struct InitialDistribution {
  Eigen::Vector4d half_width = Eigen::Vector4d::Zero();

  static InitialDistribution nominal(double epsilon) {
    InitialDistribution d;
    d.half_width << M_PI, M_PI, epsilon, epsilon;
    return d;
  }
  InitialDistribution scaled(double gamma) const {
    InitialDistribution d;
    d.half_width = half_width * gamma;
    return d;
  }
};

struct OptimizerConfig {
  int particles = 400;
  int horizon_steps = 150;  // T; costs are summed over states 0..T
  double learning_rate = 0.01;
  int max_steps = 2000;
  double dropout_rate = 0.25;
  double grad_clip = 100.0;
  int exit_window = 50;      // moving-average width
  int exit_patience = 100;   // steps without sufficient improvement
  double exit_rel_tol = 0.005;
  double cost_lengthscale = 3.0;  // l_c
  double divergence_qd = 50.0;    // [rad/s]
  bool deterministic_model = false;  // force zero posterior variance (tests)
  ExecMode exec = ExecMode::kParallel;

  void validate() const {
    if (particles < 1 || horizon_steps < 1 || !(learning_rate > 0))
      throw std::invalid_argument("optimizer config: particles/horizon/learning rate invalid");
  }
};

// 1 - exp(-|| |q| - [pi, 0] ||^2 / l_c) on wrapped angles; in [0, 1).
double saturated_cost(const JointState& state, double cost_lengthscale);

std::vector<JointState> sample_initial_particles(const InitialDistribution& dist, int n,
                                                 std::uint64_t seed);

struct ParticleBatch {
  // states[t] is N x 4 ([q1 q2 qd1 qd2]); t = 0..T
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 4>> states;
  Eigen::MatrixXd torques;  // N x T
  Eigen::MatrixXd noise;    // N x 2T, layout [2t, 2t+1]
  Eigen::VectorXd particle_cost;  // per-particle sum over time
  std::vector<int> diverged_at;   // step index, or -1
  int diverged_count = 0;
};

struct RolloutResult {
  ParticleBatch batch;
  double cost = 0.0;  // J_hat = (1/N) sum_n sum_t c(x_t^n)
};

RolloutResult rollout_particles(const GpModel& model, const PolicyParams& params,
                                const InitialDistribution& dist, const OptimizerConfig& config,
                                std::uint64_t seed);

struct RolloutGradResult {
  double cost = 0.0;
  Eigen::VectorXd grad;  // d J_hat / d flat params (w, centers, L)
  int diverged_count = 0;
};

// Same propagation as rollout_particles, recorded per block on a derivative
// tape. `weight_mask` scales the weight leaves (inverted dropout); gradients
// are with respect to the unmasked parameters.
RolloutGradResult rollout_particles_grad(const GpModel& model, const PolicyParams& params,
                                         const Eigen::VectorXd& weight_mask,
                                         const InitialDistribution& dist,
                                         const OptimizerConfig& config, std::uint64_t seed);

// Single-tape rollout objective over the flat parameter vector, for gradient
// verification via record_and_grad / finite_diff_check. Starts and noise are
// fixed by the caller.
TapeFn make_rollout_objective(const GpModel& model, int n_basis, double u_max,
                              std::vector<JointState> starts, Eigen::MatrixXd noise,
                              const OptimizerConfig& config);

struct CostHistoryRow {
  int step = 0;
  double cost = 0.0;
  double learning_rate = 0.0;
  double dropout_rate = 0.0;
};

struct OptimizeResult {
  PolicyParams params;                // best by smoothed cost
  std::vector<CostHistoryRow> history;
  int rejected_steps = 0;
  bool exit_triggered = false;
};

OptimizeResult optimize_policy(const GpModel& model, const PolicyParams& params,
                               const InitialDistribution& dist, const OptimizerConfig& config,
                               std::uint64_t seed);

// Adaptive-gradient inner loop shared by optimize_policy and the tests: the
// objective returns the step cost and fills the gradient.
using StepObjective = std::function<double(const Eigen::VectorXd& x, int step, Eigen::VectorXd* grad)>;

struct AdamLoopResult {
  Eigen::VectorXd best_x;
  std::vector<CostHistoryRow> history;
  int rejected_steps = 0;
  bool exit_triggered = false;
};

AdamLoopResult adam_loop(const StepObjective& objective, Eigen::VectorXd x0,
                         const OptimizerConfig& config);

void save_cost_history_csv(const std::vector<CostHistoryRow>& history, const std::string& path);

}  // namespace pendlab
