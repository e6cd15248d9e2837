#include "pendlab/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace pendlab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::defaults() {
  Config c;
  auto& v = c.values_;
  // plant (defaults are plausible desk-scale values; not calibrated to any
  // specific hardware)
  v["plant.m1"] = "0.6";
  v["plant.m2"] = "0.6";
  v["plant.l1"] = "0.3";
  v["plant.l2"] = "0.2";
  v["plant.r1"] = "0.25";
  v["plant.r2"] = "0.16";
  v["plant.I1"] = "0.02";
  v["plant.I2"] = "0.006";
  v["plant.b1"] = "0";
  v["plant.b2"] = "0";
  v["plant.g"] = "9.81";
  v["plant.torque_limit"] = "3.0";
  // timing
  v["sim.dt"] = "0.002";
  v["control.dt"] = "0.02";
  // GP
  v["gp.subset_max"] = "2000";
  v["gp.fit_max_iters"] = "500";
  v["gp.fit_lr"] = "0.05";
  v["gp.fit_subsample"] = "500";
  v["gp.noise_floor"] = "1e-8";
  // policy
  v["policy.n_basis"] = "200";
  v["policy.u_max"] = "3.0";
  v["policy.velocity_range"] = "6.283185307179586";
  // particle optimization
  v["opt.particles"] = "400";
  v["opt.horizon_s"] = "0";  // 0 -> variant default
  v["opt.lr"] = "0.01";
  v["opt.max_steps"] = "2000";
  v["opt.dropout"] = "0.25";
  v["opt.grad_clip"] = "100";
  v["opt.exit_window"] = "50";
  v["opt.exit_patience"] = "100";
  v["opt.exit_rel_tol"] = "0.005";
  v["opt.divergence_qd"] = "50";
  v["cost.lc"] = "3.0";
  v["init.epsilon"] = "0.005";
  // curriculum
  v["curriculum.k_m"] = "5";
  v["curriculum.ramp"] = "10";
  v["curriculum.trials"] = "20";
  // trainer
  v["trainer.exploration_s"] = "3.0";
  v["trainer.exploration_segment_s"] = "0.1";
  v["trainer.episode_s"] = "0";  // 0 -> optimization horizon
  // control stack
  v["control.damping_gain"] = "0.5";
  v["control.damping_enter"] = "20";
  v["control.damping_exit"] = "4";
  v["lqr.q_pos"] = "1";
  v["lqr.q_vel"] = "0.1";
  v["lqr.r"] = "10";
  v["lqr.rho"] = "0";  // 0 -> calibrate by simulation
  v["lqr.rho_exit_factor"] = "4";
  v["lqr.calibration_samples"] = "100";
  // evaluation harness
  v["harness.episode_s"] = "60";
  v["harness.success_pos_tol"] = "0.1";
  v["harness.success_vel_tol"] = "0.5";
  v["harness.reset_rate"] = "1";
  v["harness.reset_gap_min"] = "5";
  v["harness.reset_gap_max"] = "15";
  v["harness.reset_duration"] = "0.2";
  v["harness.pid_kp"] = "10";
  v["harness.pid_ki"] = "0";
  v["harness.pid_kd"] = "1";
  v["harness.divergence_qd"] = "1e4";
  return c;
}

Config Config::load(const std::string& path) {
  Config cfg = defaults();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (cfg.values_.find(key) == cfg.values_.end())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

double Config::get_double(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("config: unknown key '" + key + "'");
  return std::stod(it->second);
}

int Config::get_int(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("config: unknown key '" + key + "'");
  return std::stoi(it->second);
}

std::string Config::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("config: unknown key '" + key + "'");
  return it->second;
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

void Config::set(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  values_[key] = buf;
}

void Config::set(const std::string& key, int value) { values_[key] = std::to_string(value); }

void Config::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write config: " + path);
  for (const auto& [key, value] : values_) f << key << " = " << value << "\n";
}

PlantParams plant_from_config(const Config& cfg, RobotVariant variant) {
  PlantParams p;
  p.m1 = cfg.get_double("plant.m1");
  p.m2 = cfg.get_double("plant.m2");
  p.l1 = cfg.get_double("plant.l1");
  p.l2 = cfg.get_double("plant.l2");
  p.r1 = cfg.get_double("plant.r1");
  p.r2 = cfg.get_double("plant.r2");
  p.I1 = cfg.get_double("plant.I1");
  p.I2 = cfg.get_double("plant.I2");
  p.b1 = cfg.get_double("plant.b1");
  p.b2 = cfg.get_double("plant.b2");
  p.g = cfg.get_double("plant.g");
  p.torque_limit = cfg.get_double("plant.torque_limit");
  p.variant = variant;
  p.validate();
  return p;
}

TrainConfig train_config_from(const Config& cfg, RobotVariant variant, bool standard_mode,
                              std::uint64_t seed, const std::string& out_dir) {
  TrainConfig t;
  t.plant = plant_from_config(cfg, variant);
  t.curriculum.k_m = cfg.get_int("curriculum.k_m");
  t.curriculum.ramp = cfg.get_int("curriculum.ramp");
  t.curriculum.trials = cfg.get_int("curriculum.trials");
  t.curriculum.epsilon = cfg.get_double("init.epsilon");

  t.control_dt = cfg.get_double("control.dt");
  t.sim_dt = cfg.get_double("sim.dt");

  double horizon_s = cfg.get_double("opt.horizon_s");
  if (horizon_s <= 0) horizon_s = variant == RobotVariant::kPendubot ? 3.0 : 2.0;
  t.optimizer.particles = cfg.get_int("opt.particles");
  t.optimizer.horizon_steps = static_cast<int>(std::llround(horizon_s / t.control_dt));
  t.optimizer.learning_rate = cfg.get_double("opt.lr");
  t.optimizer.max_steps = cfg.get_int("opt.max_steps");
  t.optimizer.dropout_rate = cfg.get_double("opt.dropout");
  t.optimizer.grad_clip = cfg.get_double("opt.grad_clip");
  t.optimizer.exit_window = cfg.get_int("opt.exit_window");
  t.optimizer.exit_patience = cfg.get_int("opt.exit_patience");
  t.optimizer.exit_rel_tol = cfg.get_double("opt.exit_rel_tol");
  t.optimizer.cost_lengthscale = cfg.get_double("cost.lc");
  t.optimizer.divergence_qd = cfg.get_double("opt.divergence_qd");

  t.policy.n_basis = cfg.get_int("policy.n_basis");
  t.policy.u_max = cfg.get_double("policy.u_max");
  t.policy.velocity_range = cfg.get_double("policy.velocity_range");

  t.fit.max_iters = cfg.get_int("gp.fit_max_iters");
  t.fit.learning_rate = cfg.get_double("gp.fit_lr");
  t.fit.fit_subsample = cfg.get_int("gp.fit_subsample");
  t.fit.noise_floor = cfg.get_double("gp.noise_floor");
  t.subset_max = cfg.get_int("gp.subset_max");

  t.exploration_s = cfg.get_double("trainer.exploration_s");
  t.exploration_segment_s = cfg.get_double("trainer.exploration_segment_s");
  t.episode_s = cfg.get_double("trainer.episode_s");
  t.standard_mode = standard_mode;
  t.seed = seed;
  t.out_dir = out_dir;
  return t;
}

EpisodeConfig episode_config_from(const Config& cfg) {
  EpisodeConfig e;
  e.duration_s = cfg.get_double("harness.episode_s");
  e.sim_dt = cfg.get_double("sim.dt");
  const double control_dt = cfg.get_double("control.dt");
  e.control_divisor = static_cast<int>(std::llround(control_dt / e.sim_dt));
  e.divergence_qd = cfg.get_double("harness.divergence_qd");
  e.success.pos_tol = cfg.get_double("harness.success_pos_tol");
  e.success.vel_tol = cfg.get_double("harness.success_vel_tol");
  e.resets.rate = cfg.get_double("harness.reset_rate");
  e.resets.gap_min = cfg.get_double("harness.reset_gap_min");
  e.resets.gap_max = cfg.get_double("harness.reset_gap_max");
  e.resets.duration = cfg.get_double("harness.reset_duration");
  e.resets.kp = cfg.get_double("harness.pid_kp");
  e.resets.ki = cfg.get_double("harness.pid_ki");
  e.resets.kd = cfg.get_double("harness.pid_kd");
  return e;
}

DampingConfig damping_from_config(const Config& cfg) {
  DampingConfig d;
  d.gain = cfg.get_double("control.damping_gain");
  d.enter_velocity = cfg.get_double("control.damping_enter");
  d.exit_velocity = cfg.get_double("control.damping_exit");
  return d;
}

LqrStabilizer build_lqr_from_config(const Config& cfg, const PlantParams& plant,
                                    std::uint64_t seed) {
  Eigen::Matrix4d a;
  Eigen::Vector4d b;
  linearize_at_goal(plant, &a, &b);
  Eigen::Matrix4d q = Eigen::Matrix4d::Zero();
  q(0, 0) = q(1, 1) = cfg.get_double("lqr.q_pos");
  q(2, 2) = q(3, 3) = cfg.get_double("lqr.q_vel");
  const LqrDesign design = lqr_gain(a, b, q, cfg.get_double("lqr.r"));

  LqrStabilizer lqr;
  lqr.gain = design.gain;
  lqr.value = design.value;
  lqr.rho = cfg.get_double("lqr.rho");
  if (lqr.rho <= 0)
    lqr.rho = calibrate_roa(plant, design, seed, cfg.get_int("lqr.calibration_samples"));
  lqr.rho_exit = lqr.rho * cfg.get_double("lqr.rho_exit_factor");
  return lqr;
}

}  // namespace pendlab
