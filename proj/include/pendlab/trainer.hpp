// Outer trial loop: model learning, policy update, policy execution, with the
// incremental curriculum gamma_k = clip((k - k_m)/K, 0, 1) widening the
// initial-state box over trials.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pendlab/episode.hpp"
#include "pendlab/gp_model.hpp"
#include "pendlab/rollout.hpp"

namespace pendlab {

struct CurriculumConfig {
  int k_m = 5;
  int ramp = 10;  // K
  int trials = 20;
  double epsilon = 0.005;  // initial-velocity half width [rad/s]
};

double gamma_schedule(int k, int k_m, int ramp);

InitialDistribution surrogate_distribution(double gamma, double epsilon);

// Piecewise-constant random torque, one draw per segment, uniform in
// [-u_M, u_M]; simulated at sim_dt and logged at the control rate.
EpisodeLog exploration_rollout(const PlantParams& plant, std::uint64_t seed, double duration_s,
                               double segment_s, double control_dt, double sim_dt,
                               double amplitude);

// One (input, velocity-change) pair per consecutive log step. The log must be
// uniformly sampled at ts.
GpDataset collect_transitions(const EpisodeLog& log, double ts);

// Runs the policy on the 500 Hz simulator with zero-order hold at the control
// rate, logging at the control rate.
EpisodeLog execute_policy_episode(const PlantParams& plant, const PolicyParams& policy,
                                  const JointState& start, double duration_s, double control_dt,
                                  double sim_dt);

struct TrainConfig {
  PlantParams plant;
  CurriculumConfig curriculum;
  OptimizerConfig optimizer;
  PolicyConfig policy;
  FitConfig fit;
  int subset_max = 2000;
  double control_dt = 0.02;  // T_s
  double sim_dt = 0.002;
  double exploration_s = 3.0;
  double exploration_segment_s = 0.1;
  double episode_s = 0.0;    // execution length; 0 uses the optimization horizon
  bool standard_mode = false;  // gamma = 1 in every trial
  std::uint64_t seed = 0;
  std::string out_dir;  // empty disables artifacts
};

struct TrialRecord {
  int trial = 0;
  double gamma = 0.0;
  EpisodeLog episode;
  int dataset_size = 0;  // after this trial's append, before subsetting
  PolicyParams policy;
  std::vector<CostHistoryRow> cost_history;
  std::array<KernelHyp, 2> hyp;
  bool failed = false;
  std::string error;
};

struct TrainResult {
  PolicyParams policy;
  std::shared_ptr<GpModel> model;
  std::vector<TrialRecord> trials;
  std::string run_dir;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  // (i) model learning, (ii) policy update, (iii) policy execution
  TrialRecord run_trial(int k);

  const GpDataset& dataset() const { return data_; }
  const PolicyParams& policy() const { return policy_; }
  std::shared_ptr<GpModel> model() const { return model_; }
  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  GpDataset data_;
  PolicyParams policy_;
  std::shared_ptr<GpModel> model_;
};

TrainResult train(const TrainConfig& config);

}  // namespace pendlab
