// Competition-style evaluation: 60 s episodes at 500 Hz with the controller
// sampled at 50 Hz under zero-order hold, random PID resets, and the
// performance score (fraction of the episode spent stabilized upright).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pendlab/control.hpp"
#include "pendlab/episode.hpp"

namespace pendlab {

struct ResetEvent {
  double time = 0.0;                              // trigger [s]
  Eigen::Vector2d target = Eigen::Vector2d::Zero();  // joint targets ~ U(-pi, pi)^2
  double duration = 0.2;                          // [s]
};

struct ResetConfig {
  double rate = 1.0;      // 0 disables resets; gaps scale with 1/rate
  double gap_min = 5.0;   // [s]
  double gap_max = 15.0;  // [s]
  double duration = 0.2;  // [s]
  double kp = 10.0;       // PID on the actuated joint
  double ki = 0.0;
  double kd = 1.0;
};

std::vector<ResetEvent> make_reset_schedule(std::uint64_t seed, double episode_s,
                                            const ResetConfig& config);

struct SuccessRegion {
  double pos_tol = 0.1;  // [rad] on each wrapped joint error
  double vel_tol = 0.5;  // [rad/s] on each joint velocity
};

bool in_success_region(const JointState& state, const SuccessRegion& region);

struct EpisodeConfig {
  double duration_s = 60.0;
  double sim_dt = 0.002;      // 500 Hz
  int control_divisor = 10;   // one controller tick per 10 simulator steps
  double divergence_qd = 1e4;
  SuccessRegion success;
  ResetConfig resets;
};

struct EvalResult {
  EpisodeLog log;
  double score = 0.0;
  int resets = 0;
  bool diverged = false;
};

// Simulates one scored episode from the hanging rest state. During a reset
// window the PID torque replaces the controller output on the actuated joint.
EvalResult evaluate_episode(const ControllerAssets& assets, const PlantParams& plant,
                            std::uint64_t seed, const std::vector<ResetEvent>& schedule,
                            const EpisodeConfig& config);

// Fraction of logged samples inside the success region.
double performance_score(const EpisodeLog& log, const SuccessRegion& region);

struct BenchmarkEntry {
  std::string name;
  ControllerAssets assets;
};

struct BenchmarkRow {
  std::string controller;
  std::string variant;
  std::uint64_t seed = 0;
  double score = 0.0;
  int resets = 0;
  bool diverged = false;
};

struct BenchmarkSummary {
  std::string controller;
  double mean_score = 0.0;
  double stddev_score = 0.0;
  int episodes = 0;
  int failures = 0;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;
  std::vector<BenchmarkSummary> summary;
};

// Scores every controller on `episodes` seeded episodes (seed, seed+1, ...).
// Episode failures are recorded and excluded from the mean.
BenchmarkResult run_benchmark(const std::vector<BenchmarkEntry>& controllers,
                              const PlantParams& plant, int episodes, std::uint64_t seed,
                              const EpisodeConfig& config);

void save_benchmark_json(const BenchmarkResult& result, const std::string& path);
std::string format_benchmark_table(const BenchmarkResult& result);

}  // namespace pendlab
