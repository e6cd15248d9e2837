#include "pendlab/harness.hpp"

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "pendlab/rng.hpp"

namespace pendlab {

std::vector<ResetEvent> make_reset_schedule(std::uint64_t seed, double episode_s,
                                            const ResetConfig& config) {
  std::vector<ResetEvent> schedule;
  if (config.rate <= 0.0) return schedule;
  if (!(config.gap_min > 0) || config.gap_max < config.gap_min)
    throw std::invalid_argument("make_reset_schedule: bad gap bounds");
  Rng rng(derive_seed(seed, 0x4353));
  double t = 0.0;
  while (true) {
    t += rng.uniform(config.gap_min, config.gap_max) / config.rate;
    if (t + config.duration >= episode_s) break;
    ResetEvent ev;
    ev.time = t;
    ev.target << rng.uniform(-M_PI, M_PI), rng.uniform(-M_PI, M_PI);
    ev.duration = config.duration;
    schedule.push_back(ev);
  }
  return schedule;
}

bool in_success_region(const JointState& state, const SuccessRegion& region) {
  const double e1 = wrap_angle(state.q[0] - M_PI);
  const double e2 = wrap_angle(state.q[1]);
  return std::abs(e1) < region.pos_tol && std::abs(e2) < region.pos_tol &&
         std::abs(state.qd[0]) < region.vel_tol && std::abs(state.qd[1]) < region.vel_tol;
}

double performance_score(const EpisodeLog& log, const SuccessRegion& region) {
  if (log.size() == 0) return 0.0;
  std::size_t in_goal = 0;
  for (std::size_t i = 0; i < log.size(); ++i)
    if (in_success_region(log.state(i), region)) ++in_goal;
  return static_cast<double>(in_goal) / static_cast<double>(log.size());
}

EvalResult evaluate_episode(const ControllerAssets& assets, const PlantParams& plant,
                            std::uint64_t seed, const std::vector<ResetEvent>& schedule,
                            const EpisodeConfig& config) {
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (schedule[i].time < schedule[i - 1].time + schedule[i - 1].duration)
      throw std::invalid_argument("evaluate_episode: overlapping reset events");

  EvalResult out;
  out.log.dt = config.sim_dt;
  out.log.seed = seed;
  out.log.variant = plant.variant;
  out.resets = static_cast<int>(schedule.size());

  JointState state;  // hanging rest
  ControllerMode mode = ControllerMode::kPolicy;
  double u_hold = 0.0;
  std::size_t next_event = 0;
  const int n_steps = static_cast<int>(std::llround(config.duration_s / config.sim_dt));
  const int act = plant.actuated_joint();

  for (int k = 0; k < n_steps; ++k) {
    const double t = k * config.sim_dt;

    bool resetting = false;
    if (next_event < schedule.size()) {
      const ResetEvent& ev = schedule[next_event];
      if (t >= ev.time && t < ev.time + ev.duration) {
        resetting = true;
      } else if (t >= ev.time + ev.duration) {
        ++next_event;
        if (next_event < schedule.size() && t >= schedule[next_event].time &&
            t < schedule[next_event].time + schedule[next_event].duration)
          resetting = true;
      }
    }

    double u;
    if (resetting) {
      // PID override on the actuated joint; the controller is not consulted
      const ResetEvent& ev = schedule[next_event];
      const double err = ev.target[act] - state.q[act];
      u = std::clamp(config.resets.kp * err - config.resets.kd * state.qd[act],
                     -plant.torque_limit, plant.torque_limit);
    } else {
      if (k % config.control_divisor == 0) {
        const ControlDecision d = controller_step(state, mode, assets);
        mode = d.mode;
        u_hold = d.torque;
      }
      u = u_hold;
    }

    out.log.push(t, state, u, resetting ? LogMode::kReset
                                        : (mode == ControllerMode::kPolicy ? LogMode::kPolicy
                                           : mode == ControllerMode::kDamping
                                               ? LogMode::kDamping
                                               : LogMode::kLqr),
                 resetting);

    state = rk4_step(state, u, config.sim_dt, plant);
    if (!state.finite() || state.qd.cwiseAbs().maxCoeff() > config.divergence_qd) {
      out.diverged = true;
      out.log.truncated = true;
      break;
    }
  }

  out.score = performance_score(out.log, config.success);
  return out;
}

BenchmarkResult run_benchmark(const std::vector<BenchmarkEntry>& controllers,
                              const PlantParams& plant, int episodes, std::uint64_t seed,
                              const EpisodeConfig& config) {
  if (controllers.empty()) throw std::invalid_argument("run_benchmark: no controllers");
  if (episodes < 1) throw std::invalid_argument("run_benchmark: episodes must be >= 1");

  BenchmarkResult result;
  const int total = static_cast<int>(controllers.size()) * episodes;
  result.rows.resize(total);
  std::vector<std::uint8_t> failed(total, 0);

#pragma omp parallel for schedule(dynamic)
  for (int job = 0; job < total; ++job) {
    const int ci = job / episodes;
    const int ei = job % episodes;
    const std::uint64_t ep_seed = seed + static_cast<std::uint64_t>(ei);
    BenchmarkRow& row = result.rows[job];
    row.controller = controllers[ci].name;
    row.variant = to_string(plant.variant);
    row.seed = ep_seed;
    try {
      const auto schedule = make_reset_schedule(ep_seed, config.duration_s, config.resets);
      const EvalResult r =
          evaluate_episode(controllers[ci].assets, plant, ep_seed, schedule, config);
      row.score = r.score;
      row.resets = r.resets;
      row.diverged = r.diverged;
    } catch (const std::exception&) {
      failed[job] = 1;
    }
  }

  for (std::size_t ci = 0; ci < controllers.size(); ++ci) {
    BenchmarkSummary s;
    s.controller = controllers[ci].name;
    double sum = 0.0, sum2 = 0.0;
    int n = 0;
    for (int ei = 0; ei < episodes; ++ei) {
      const int job = static_cast<int>(ci) * episodes + ei;
      if (failed[job]) {
        ++s.failures;
        continue;
      }
      sum += result.rows[job].score;
      sum2 += result.rows[job].score * result.rows[job].score;
      ++n;
    }
    s.episodes = n;
    if (n > 0) {
      s.mean_score = sum / n;
      const double var = std::max(0.0, sum2 / n - s.mean_score * s.mean_score);
      s.stddev_score = std::sqrt(var);
    }
    result.summary.push_back(s);
  }
  return result;
}

void save_benchmark_json(const BenchmarkResult& result, const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = 1;
  for (const auto& row : result.rows) {
    j["rows"].push_back({{"controller", row.controller},
                         {"variant", row.variant},
                         {"seed", row.seed},
                         {"score", row.score},
                         {"resets", row.resets},
                         {"diverged", row.diverged}});
  }
  for (const auto& s : result.summary) {
    j["summary"].push_back({{"controller", s.controller},
                            {"mean_score", s.mean_score},
                            {"stddev_score", s.stddev_score},
                            {"episodes", s.episodes},
                            {"failures", s.failures}});
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write benchmark table: " + path);
  f << j.dump(2) << "\n";
}

std::string format_benchmark_table(const BenchmarkResult& result) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %10s %10s %9s %9s\n", "controller", "mean", "stddev",
                "episodes", "failures");
  out += buf;
  for (const auto& s : result.summary) {
    std::snprintf(buf, sizeof buf, "%-28s %10.4f %10.4f %9d %9d\n", s.controller.c_str(),
                  s.mean_score, s.stddev_score, s.episodes, s.failures);
    out += buf;
  }
  return out;
}

}  // namespace pendlab
