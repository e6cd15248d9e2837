// Time-stamped trajectory records and their CSV form
// (`t,q1,q2,qd1,qd2,u,mode`). Reset windows appear as mode RESET.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "pendlab/dynamics.hpp"

namespace pendlab {

enum class LogMode : std::uint8_t { kNone, kPolicy, kDamping, kLqr, kReset };

std::string to_string(LogMode mode);
LogMode log_mode_from_string(const std::string& s);

struct EpisodeLog {
  double dt = 0.02;  // uniform sampling step
  std::vector<double> t;
  std::vector<Eigen::Vector4d> x;  // [q1, q2, qd1, qd2]
  std::vector<double> u;
  std::vector<LogMode> mode;
  std::vector<std::uint8_t> reset_active;
  std::uint64_t seed = 0;
  RobotVariant variant = RobotVariant::kPendubot;
  bool truncated = false;  // simulation diverged before the horizon

  std::size_t size() const { return t.size(); }
  void push(double time, const JointState& s, double torque, LogMode m, bool reset);
  JointState state(std::size_t i) const;
};

void save_episode_csv(const EpisodeLog& log, const std::string& path);
EpisodeLog load_episode_csv(const std::string& path);

}  // namespace pendlab
