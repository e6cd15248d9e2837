// Per-DoF Gaussian-process models of the one-step change in velocity, with the
// rigid-body forward dynamics as prior mean. Positions follow by trapezoidal
// kinematics:
//   qd[t+1] = qd[t] + Delta
//   q[t+1]  = q[t] + Ts*qd[t] + (Ts/2)*Delta
// The two DoF are independent GPs over the input [q1, q2, qd1, qd2, u].
#pragma once

#include <Eigen/Dense>
#include <array>
#include <atomic>
#include <cstdint>
#include <string>

#include "pendlab/dynamics.hpp"
#include "pendlab/tape.hpp"

namespace pendlab {

inline constexpr int kGpInputDim = 5;

using GpInput = Eigen::Matrix<double, kGpInputDim, 1>;  // [q1, q2, qd1, qd2, u]

inline GpInput make_gp_input(const JointState& s, double u) {
  GpInput x;
  x << s.q[0], s.q[1], s.qd[0], s.qd[1], u;
  return x;
}

struct GpDataset {
  Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor> inputs;
  Eigen::Matrix<double, Eigen::Dynamic, 2> targets;  // raw velocity changes [rad/s]
  double ts = 0.02;

  int size() const { return static_cast<int>(inputs.rows()); }
  void append(const GpInput& x, const Eigen::Vector2d& dv);
  void append(const GpDataset& other);
};

struct KernelHyp {
  Eigen::Matrix<double, kGpInputDim, 1> lengthscales = Eigen::Matrix<double, kGpInputDim, 1>::Ones();
  double signal_var = 1.0;
  double noise_var = 1e-4;

  void validate() const {
    if (!(signal_var > 0) || !(noise_var > 0) || !(lengthscales.array() > 0).all())
      throw std::invalid_argument("kernel hyperparameters must be strictly positive");
  }
};

double se_kernel(const GpInput& a, const GpInput& b, const KernelHyp& hyp);

// m_Delta(x) = Ts * M(q)^-1 (B u - n(q, qd)); identical code path to
// forward_dynamics, scaled by the sampling time.
Eigen::Vector2d prior_mean(const GpInput& x, const PlantParams& params, double ts);

struct FitConfig {
  int max_iters = 500;
  double learning_rate = 0.05;
  int fit_subsample = 500;   // log-ML evaluated on the most recent points
  double noise_floor = 1e-8;
};

struct FitResult {
  std::array<KernelHyp, 2> hyp;
  std::array<bool, 2> converged{false, false};
  std::array<double, 2> final_nll{0.0, 0.0};
};

// Maximizes the log marginal likelihood of (targets - prior mean) per DoF by
// adaptive gradient ascent in log-parameter space, restarting from unit and
// data-scaled lengthscales.
FitResult fit_hyperparameters(const GpDataset& dataset, const PlantParams& params,
                              const FitConfig& config = {});

// Keeps the most recent max_n rows (stable order).
GpDataset subset_of_data(const GpDataset& dataset, int max_n);

// Correction = posterior mean minus prior mean; var = posterior variance.
// Partials are with respect to the 5 query inputs (zeroed where the variance
// clamps at zero).
struct GpBatchResult {
  Eigen::MatrixXd corr;  // B x 2
  Eigen::MatrixXd var;   // B x 2
  std::array<Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim>, 2> dcorr;
  std::array<Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim>, 2> dvar;
};

class GpModel {
 public:
  // Builds the cached solve against Gamma_i = K + sigma_i^2 I. Jitter up to
  // 1e-6 is added if the Cholesky factorization fails.
  GpModel(GpDataset dataset, std::array<KernelHyp, 2> hyp, PlantParams plant);

  // Posterior over the velocity change at x (prior mean included).
  void posterior(const GpInput& x, Eigen::Vector2d* mean, Eigen::Vector2d* var) const;

  // Batched residual query used by the particle rollouts.
  void query_block(const Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor>& queries,
                   bool with_partials, GpBatchResult* out) const;

  const GpDataset& dataset() const { return dataset_; }
  const KernelHyp& hyp(int dof) const { return hyp_[dof]; }
  const PlantParams& plant() const { return plant_; }
  double ts() const { return dataset_.ts; }
  int size() const { return dataset_.size(); }
  double jitter(int dof) const { return jitter_[dof]; }
  long variance_clamp_count() const { return var_clamps_.load(); }

 private:
  GpDataset dataset_;
  std::array<KernelHyp, 2> hyp_;
  PlantParams plant_;
  std::array<double, 2> jitter_{0.0, 0.0};
  // per DoF: training inputs scaled by 1/lengthscale, their squared norms,
  // Gamma^-1 residual weights, and the dense Gamma^-1
  std::array<Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor>, 2> x_scaled_;
  std::array<Eigen::VectorXd, 2> x_norm2_;
  std::array<Eigen::VectorXd, 2> alpha_;
  std::array<Eigen::MatrixXd, 2> gamma_inv_;
  mutable std::atomic<long> var_clamps_{0};
};

struct GaussianState {
  Eigen::Vector4d mean;  // [q1, q2, qd1, qd2]
  Eigen::Matrix4d cov;
};

GaussianState one_step_predict(const JointState& state, double u, const GpModel& model);

// Reparameterized sample: Delta = mean + sqrt(var) .* noise, noise supplied by
// the caller so the map is deterministic.
JointState sample_next_state(const JointState& state, double u, const GpModel& model,
                             const Eigen::Vector2d& noise);

// Fused tape query: two nodes (correction, variance) per DoF whose partials
// cover the five query inputs.
struct GpCorrectionVars {
  std::array<Var, 2> corr;
  std::array<Var, 2> var;
};
GpCorrectionVars gp_correction_vars(Tape& tape, const GpModel& model,
                                    const std::array<Var, kGpInputDim>& x);

void save_dataset_csv(const GpDataset& dataset, const std::string& path);
GpDataset load_dataset_csv(const std::string& path, double ts);

void save_hyp_json(const std::array<KernelHyp, 2>& hyp, const std::string& path);
std::array<KernelHyp, 2> load_hyp_json(const std::string& path);

}  // namespace pendlab
