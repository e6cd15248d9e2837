#include "pendlab/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "pendlab/rng.hpp"

namespace pendlab {

double gamma_schedule(int k, int k_m, int ramp) {
  if (k < 0) throw std::invalid_argument("gamma_schedule: trial index must be non-negative");
  if (ramp < 1) throw std::invalid_argument("gamma_schedule: ramp length must be >= 1");
  const double g = static_cast<double>(k - k_m) / static_cast<double>(ramp);
  return std::clamp(g, 0.0, 1.0);
}

InitialDistribution surrogate_distribution(double gamma, double epsilon) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("surrogate_distribution: gamma must be in [0, 1]");
  return InitialDistribution::nominal(epsilon).scaled(gamma);
}

EpisodeLog exploration_rollout(const PlantParams& plant, std::uint64_t seed, double duration_s,
                               double segment_s, double control_dt, double sim_dt,
                               double amplitude) {
  if (!(duration_s > 0)) throw std::invalid_argument("exploration_rollout: duration must be > 0");
  Rng rng(derive_seed(seed, 0xE87));
  EpisodeLog log;
  log.dt = control_dt;
  log.seed = seed;
  log.variant = plant.variant;

  const int n_ticks = static_cast<int>(std::llround(duration_s / control_dt));
  const int substeps = static_cast<int>(std::llround(control_dt / sim_dt));
  const int ticks_per_segment = std::max(1, static_cast<int>(std::llround(segment_s / control_dt)));

  JointState state;
  double u = 0.0;
  for (int k = 0; k < n_ticks; ++k) {
    if (k % ticks_per_segment == 0) u = rng.uniform(-amplitude, amplitude);
    log.push(k * control_dt, state, u, LogMode::kNone, false);
    for (int j = 0; j < substeps; ++j) state = rk4_step(state, u, sim_dt, plant);
    if (!state.finite()) {
      log.truncated = true;
      break;
    }
  }
  if (!log.truncated) log.push(n_ticks * control_dt, state, 0.0, LogMode::kNone, false);
  return log;
}

GpDataset collect_transitions(const EpisodeLog& log, double ts) {
  for (std::size_t i = 1; i < log.size(); ++i)
    if (std::abs((log.t[i] - log.t[i - 1]) - ts) > 1e-9)
      throw std::invalid_argument("collect_transitions: log not uniformly sampled at ts");
  GpDataset ds;
  ds.ts = ts;
  if (log.size() < 2) return ds;
  const int n = static_cast<int>(log.size()) - 1;
  ds.inputs.resize(n, kGpInputDim);
  ds.targets.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    ds.inputs.row(i) << log.x[i][0], log.x[i][1], log.x[i][2], log.x[i][3], log.u[i];
    ds.targets(i, 0) = log.x[i + 1][2] - log.x[i][2];
    ds.targets(i, 1) = log.x[i + 1][3] - log.x[i][3];
  }
  return ds;
}

EpisodeLog execute_policy_episode(const PlantParams& plant, const PolicyParams& policy,
                                  const JointState& start, double duration_s, double control_dt,
                                  double sim_dt) {
  EpisodeLog log;
  log.dt = control_dt;
  log.variant = plant.variant;
  const int n_ticks = static_cast<int>(std::llround(duration_s / control_dt));
  const int substeps = static_cast<int>(std::llround(control_dt / sim_dt));

  JointState state = start;
  for (int k = 0; k < n_ticks; ++k) {
    const double u = policy_eval(policy, state);
    log.push(k * control_dt, state, u, LogMode::kPolicy, false);
    for (int j = 0; j < substeps; ++j) state = rk4_step(state, u, sim_dt, plant);
    if (!state.finite() || state.qd.cwiseAbs().maxCoeff() > 1e4) {
      log.truncated = true;
      break;
    }
  }
  if (!log.truncated) log.push(n_ticks * control_dt, state, 0.0, LogMode::kPolicy, false);
  return log;
}

Trainer::Trainer(TrainConfig config) : config_(std::move(config)) {
  config_.plant.validate();
  config_.optimizer.validate();
  policy_ = init_policy(config_.seed, config_.policy);
  const EpisodeLog explore = exploration_rollout(
      config_.plant, derive_seed(config_.seed, 0xE0), config_.exploration_s,
      config_.exploration_segment_s, config_.control_dt, config_.sim_dt,
      config_.plant.torque_limit);
  data_ = collect_transitions(explore, config_.control_dt);
}

TrialRecord Trainer::run_trial(int k) {
  TrialRecord rec;
  rec.trial = k;
  rec.gamma = config_.standard_mode
                  ? 1.0
                  : gamma_schedule(k, config_.curriculum.k_m, config_.curriculum.ramp);
  try {
    const InitialDistribution dist = surrogate_distribution(rec.gamma, config_.curriculum.epsilon);

    // (i) model learning
    const GpDataset subset = subset_of_data(data_, config_.subset_max);
    const FitResult fit = fit_hyperparameters(subset, config_.plant, config_.fit);
    model_ = std::make_shared<GpModel>(subset, fit.hyp, config_.plant);
    rec.hyp = fit.hyp;

    // (ii) policy update, warm-started from the previous trial
    const OptimizeResult opt =
        optimize_policy(*model_, policy_, dist, config_.optimizer,
                        derive_seed(config_.seed, 0x09, static_cast<std::uint64_t>(k)));
    policy_ = opt.params;
    rec.cost_history = opt.history;

    // (iii) policy execution on the simulator
    const JointState start =
        sample_initial_particles(dist, 1,
                                 derive_seed(config_.seed, 0xE1, static_cast<std::uint64_t>(k)))[0];
    const double horizon_s = config_.optimizer.horizon_steps * config_.control_dt;
    const double episode_s = config_.episode_s > 0 ? config_.episode_s : horizon_s;
    rec.episode = execute_policy_episode(config_.plant, policy_, start, episode_s,
                                         config_.control_dt, config_.sim_dt);
    data_.append(collect_transitions(rec.episode, config_.control_dt));
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  rec.dataset_size = data_.size();
  rec.policy = policy_;
  return rec;
}

namespace {

void save_model_json(const std::array<KernelHyp, 2>& hyp, const GpModel* model,
                     const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = 1;
  for (int dof = 0; dof < 2; ++dof) {
    nlohmann::json h;
    h["lengthscales"] = std::vector<double>(hyp[dof].lengthscales.data(),
                                            hyp[dof].lengthscales.data() + kGpInputDim);
    h["signal_var"] = hyp[dof].signal_var;
    h["noise_var"] = hyp[dof].noise_var;
    j["dofs"].push_back(h);
  }
  if (model) {
    j["dataset_size"] = model->size();
    j["ts"] = model->ts();
    j["jitter"] = {model->jitter(0), model->jitter(1)};
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write model summary: " + path);
  f << j.dump(2) << "\n";
}

}  // namespace

TrainResult train(const TrainConfig& config) {
  namespace fs = std::filesystem;
  const bool artifacts = !config.out_dir.empty();
  if (artifacts) fs::create_directories(config.out_dir);

  Trainer trainer(config);
  TrainResult result;
  result.run_dir = config.out_dir;

  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["variant"] = to_string(config.plant.variant);
  manifest["mode"] = config.standard_mode ? "standard" : "incremental";
  manifest["seed"] = config.seed;
  manifest["trials"] = nlohmann::json::array();

  for (int k = 0; k < config.curriculum.trials; ++k) {
    TrialRecord rec = trainer.run_trial(k);
    if (artifacts) {
      const fs::path dir = fs::path(config.out_dir) / ("trial_" + std::to_string(k));
      fs::create_directories(dir);
      if (!rec.failed) {
        save_episode_csv(rec.episode, (dir / "episode.csv").string());
        save_cost_history_csv(rec.cost_history, (dir / "cost_history.csv").string());
        save_model_json(rec.hyp, trainer.model().get(), (dir / "model.json").string());
      }
      save_policy_json(rec.policy, (dir / "policy.json").string());
      manifest["trials"].push_back(
          {{"trial", k},
           {"gamma", rec.gamma},
           {"dir", "trial_" + std::to_string(k)},
           {"dataset_size", rec.dataset_size},
           {"failed", rec.failed},
           {"final_cost", rec.cost_history.empty() ? -1.0 : rec.cost_history.back().cost}});
    }
    result.trials.push_back(std::move(rec));
  }

  result.policy = trainer.policy();
  result.model = trainer.model();
  if (artifacts) {
    std::ofstream f((fs::path(config.out_dir) / "manifest.json").string());
    f << manifest.dump(2) << "\n";
  }
  return result;
}

}  // namespace pendlab
