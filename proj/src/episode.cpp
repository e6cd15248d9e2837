#include "pendlab/episode.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace pendlab {

std::string to_string(LogMode mode) {
  switch (mode) {
    case LogMode::kNone: return "NONE";
    case LogMode::kPolicy: return "POLICY";
    case LogMode::kDamping: return "DAMPING";
    case LogMode::kLqr: return "LQR";
    case LogMode::kReset: return "RESET";
  }
  return "?";
}

LogMode log_mode_from_string(const std::string& s) {
  if (s == "NONE") return LogMode::kNone;
  if (s == "POLICY") return LogMode::kPolicy;
  if (s == "DAMPING") return LogMode::kDamping;
  if (s == "LQR") return LogMode::kLqr;
  if (s == "RESET") return LogMode::kReset;
  throw std::invalid_argument("unknown log mode: " + s);
}

void EpisodeLog::push(double time, const JointState& s, double torque, LogMode m, bool reset) {
  t.push_back(time);
  x.emplace_back(s.q[0], s.q[1], s.qd[0], s.qd[1]);
  u.push_back(torque);
  mode.push_back(reset ? LogMode::kReset : m);
  reset_active.push_back(reset ? 1 : 0);
}

JointState EpisodeLog::state(std::size_t i) const {
  JointState s;
  s.q = x[i].head<2>();
  s.qd = x[i].tail<2>();
  return s;
}

void save_episode_csv(const EpisodeLog& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write episode: " + path);
  f << "t,q1,q2,qd1,qd2,u,mode\n";
  char buf[420];
  for (std::size_t i = 0; i < log.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n", log.t[i],
                  log.x[i][0], log.x[i][1], log.x[i][2], log.x[i][3], log.u[i],
                  to_string(log.mode[i]).c_str());
    f << buf;
  }
}

EpisodeLog load_episode_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read episode: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "t,q1,q2,qd1,qd2,u,mode")
    throw std::runtime_error("bad episode header in " + path);
  EpisodeLog log;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    double vals[6];
    for (int c = 0; c < 6; ++c) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error("short episode row in " + path);
      vals[c] = std::stod(cell);
    }
    if (!std::getline(ss, cell, ',')) throw std::runtime_error("missing mode in " + path);
    const LogMode m = log_mode_from_string(cell);
    log.t.push_back(vals[0]);
    log.x.emplace_back(vals[1], vals[2], vals[3], vals[4]);
    log.u.push_back(vals[5]);
    log.mode.push_back(m);
    log.reset_active.push_back(m == LogMode::kReset ? 1 : 0);
  }
  if (log.size() >= 2) log.dt = log.t[1] - log.t[0];
  return log;
}

}  // namespace pendlab
