// Flat key-value configuration (`key = value`, '#' comments). Every key has a
// documented default; unknown keys in a file are rejected to catch typos.
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pendlab/control.hpp"
#include "pendlab/harness.hpp"
#include "pendlab/trainer.hpp"

namespace pendlab {

class Config {
 public:
  static Config defaults();
  // defaults overridden by the file; unknown keys raise std::runtime_error
  static Config load(const std::string& path);

  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::string get_string(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, int value);

  void save(const std::string& path) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

PlantParams plant_from_config(const Config& cfg, RobotVariant variant);

// horizon: opt.horizon_s <= 0 selects the variant default (3.0 s pendubot,
// 2.0 s acrobot).
TrainConfig train_config_from(const Config& cfg, RobotVariant variant, bool standard_mode,
                              std::uint64_t seed, const std::string& out_dir);

EpisodeConfig episode_config_from(const Config& cfg);

DampingConfig damping_from_config(const Config& cfg);

// Builds the LQR stabilizer for the plant: gains from lqr.q_pos/q_vel/lqr.r,
// rho from lqr.rho or calibrated by simulation when lqr.rho <= 0.
LqrStabilizer build_lqr_from_config(const Config& cfg, const PlantParams& plant,
                                    std::uint64_t seed);

}  // namespace pendlab
