// Command-line interface: simulate / train / evaluate / benchmark / check.
#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <optional>

#include "pendlab/config.hpp"
#include "pendlab/harness.hpp"
#include "pendlab/rng.hpp"
#include "pendlab/trainer.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace pendlab;

namespace {

struct CommonArgs {
  std::string variant = "pendubot";
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--variant", args->variant, "robot variant")
      ->check(CLI::IsMember({"pendubot", "acrobot"}));
  cmd->add_option("--config", args->config_path, "flat key-value config file");
  cmd->add_option("--seed", args->seed, "master random seed");
  cmd->add_option("--out", args->out_dir, "output directory");
  cmd->add_option("--threads", args->threads, "OpenMP thread count (0 = default)");
}

Config load_config(const CommonArgs& args) {
  if (args.threads > 0) omp_set_num_threads(args.threads);
  return args.config_path.empty() ? Config::defaults() : Config::load(args.config_path);
}

ControllerAssets assemble_assets(const Config& cfg, const PlantParams& plant,
                                 const std::string& policy_path, const std::string& lqr_path,
                                 std::uint64_t seed) {
  ControllerAssets assets = make_controller_assets(plant, load_policy_json(policy_path));
  assets.damping = damping_from_config(cfg);
  if (plant.variant == RobotVariant::kAcrobot) {
    if (!lqr_path.empty())
      assets.lqr = load_lqr_json(lqr_path);
    else
      assets.lqr = build_lqr_from_config(cfg, plant, seed);
  }
  return assets;
}

int run_simulate(const CommonArgs& args, const std::string& policy_path,
                 const std::string& lqr_path, double duration, double torque) {
  const Config cfg = load_config(args);
  const PlantParams plant = plant_from_config(cfg, variant_from_string(args.variant));
  fs::create_directories(args.out_dir);
  const fs::path out = fs::path(args.out_dir) / "episode.csv";

  if (policy_path.empty()) {
    // open-loop constant torque at the simulation rate
    const double sim_dt = cfg.get_double("sim.dt");
    EpisodeLog log;
    log.dt = sim_dt;
    log.variant = plant.variant;
    JointState s;
    const int n = static_cast<int>(std::llround(duration / sim_dt));
    for (int k = 0; k < n; ++k) {
      log.push(k * sim_dt, s, torque, LogMode::kNone, false);
      s = rk4_step(s, torque, sim_dt, plant);
      if (!s.finite()) break;
    }
    save_episode_csv(log, out.string());
  } else {
    const ControllerAssets assets = assemble_assets(cfg, plant, policy_path, lqr_path, args.seed);
    EpisodeConfig ep = episode_config_from(cfg);
    ep.duration_s = duration;
    const EvalResult r = evaluate_episode(assets, plant, args.seed, {}, ep);
    save_episode_csv(r.log, out.string());
    std::printf("closed-loop episode: %.1f s, score %.4f\n", duration, r.score);
  }
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int run_train(const CommonArgs& args, const std::string& mode) {
  const Config cfg = load_config(args);
  fs::create_directories(args.out_dir);
  cfg.save((fs::path(args.out_dir) / "config.snapshot").string());
  const TrainConfig tc = train_config_from(cfg, variant_from_string(args.variant),
                                           mode == "standard", args.seed, args.out_dir);
  const TrainResult result = train(tc);
  int failed = 0;
  for (const auto& t : result.trials) {
    std::printf("trial %2d  gamma %.2f  dataset %5d  steps %4zu  final J %.3f%s\n", t.trial,
                t.gamma, t.dataset_size, t.cost_history.size(),
                t.cost_history.empty() ? -1.0 : t.cost_history.back().cost,
                t.failed ? "  FAILED" : "");
    if (t.failed) ++failed;
  }
  std::printf("run directory: %s\n", result.run_dir.c_str());
  return failed == static_cast<int>(result.trials.size()) ? 1 : 0;
}

int run_evaluate(const CommonArgs& args, const std::string& policy_path,
                 const std::string& lqr_path, int episodes) {
  const Config cfg = load_config(args);
  const PlantParams plant = plant_from_config(cfg, variant_from_string(args.variant));
  const ControllerAssets assets = assemble_assets(cfg, plant, policy_path, lqr_path, args.seed);
  const EpisodeConfig ep = episode_config_from(cfg);
  fs::create_directories(args.out_dir);

  BenchmarkResult result;
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t ep_seed = args.seed + static_cast<std::uint64_t>(e);
    const auto schedule = make_reset_schedule(ep_seed, ep.duration_s, ep.resets);
    const EvalResult r = evaluate_episode(assets, plant, ep_seed, schedule, ep);
    save_episode_csv(r.log,
                     (fs::path(args.out_dir) / ("episode_" + std::to_string(e) + ".csv")).string());
    result.rows.push_back({"policy", to_string(plant.variant), ep_seed, r.score,
                           r.resets, r.diverged});
    std::printf("episode %d  seed %llu  score %.4f  resets %d%s\n", e,
                static_cast<unsigned long long>(ep_seed), r.score, r.resets,
                r.diverged ? "  DIVERGED" : "");
  }
  double mean = 0;
  for (const auto& row : result.rows) mean += row.score;
  mean /= episodes;
  BenchmarkSummary s;
  s.controller = "policy";
  s.mean_score = mean;
  s.episodes = episodes;
  result.summary.push_back(s);
  save_benchmark_json(result, (fs::path(args.out_dir) / "scores.json").string());
  std::printf("mean score over %d episodes: %.4f (approximate competition metric)\n", episodes,
              mean);
  return 0;
}

int run_bench_cmd(const CommonArgs& args, const std::vector<std::string>& controller_specs,
                  int episodes) {
  const Config cfg = load_config(args);
  const PlantParams plant = plant_from_config(cfg, variant_from_string(args.variant));
  const EpisodeConfig ep = episode_config_from(cfg);

  std::vector<BenchmarkEntry> entries;
  for (const auto& spec : controller_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--controller expects name=policy.json[:lqr.json]");
    const std::string name = spec.substr(0, eq);
    std::string paths = spec.substr(eq + 1);
    std::string lqr_path;
    if (const auto colon = paths.find(':'); colon != std::string::npos) {
      lqr_path = paths.substr(colon + 1);
      paths = paths.substr(0, colon);
    }
    entries.push_back({name, assemble_assets(cfg, plant, paths, lqr_path, args.seed)});
  }
  const BenchmarkResult result = run_benchmark(entries, plant, episodes, args.seed, ep);
  fs::create_directories(args.out_dir);
  save_benchmark_json(result, (fs::path(args.out_dir) / "score_table.json").string());
  std::printf("%s", format_benchmark_table(result).c_str());
  std::printf("scores are a documented approximation of the competition metric\n");
  return 0;
}

// Self-check suite: fast oracle and property checks runnable in the field.
int run_check(const CommonArgs& args) {
  const Config cfg = load_config(args);
  int failures = 0;
  const auto report = [&](const char* name, bool ok) {
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name);
    if (!ok) ++failures;
  };

  PlantParams plant = plant_from_config(cfg, variant_from_string(args.variant));

  {
    Rng rng(1);
    bool ok = true;
    for (int i = 0; i < 2000 && ok; ++i) {
      const Eigen::Vector2d q(rng.uniform(-6, 6), rng.uniform(-6, 6));
      const Eigen::Matrix2d m = mass_matrix(q, plant);
      ok = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(m).eigenvalues().minCoeff() > 0;
    }
    report("mass matrix positive definite on random configurations", ok);
  }
  {
    const Eigen::Vector2d q(0.3, -1.1);
    const double err =
        (mass_matrix(q, plant) - oracle::mass_matrix(q, plant)).cwiseAbs().maxCoeff();
    report("mass matrix matches energy-based oracle", err < 1e-8);
  }
  {
    JointState s;
    s.q << M_PI / 2, 0.0;
    const double e0 = total_energy(s, plant);
    PlantParams undamped = plant;
    undamped.b1 = undamped.b2 = 0.0;
    double drift = 0.0;
    for (int i = 0; i < 5000; ++i) {
      s = rk4_step(s, 0.0, 0.002, undamped);
      drift = std::max(drift, std::abs(total_energy(s, undamped) - e0));
    }
    report("RK4 energy drift < 1e-3 over 10 s", drift / e0 < 1e-3);
  }
  {
    GpDataset ds;
    ds.ts = cfg.get_double("control.dt");
    Rng rng(3);
    for (int i = 0; i < 30; ++i) {
      GpInput x;
      x << rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-5, 5), rng.uniform(-5, 5),
          rng.uniform(-3, 3);
      ds.append(x, prior_mean(x, plant, ds.ts) +
                       0.1 * Eigen::Vector2d(std::sin(x[0]), std::cos(x[1])));
    }
    KernelHyp h;
    h.signal_var = 0.5;
    h.noise_var = 1e-5;
    const GpModel model(ds, {h, h}, plant);
    bool ok = true;
    for (int k = 0; k < 20 && ok; ++k) {
      GpInput x;
      x << rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-5, 5), rng.uniform(-5, 5),
          rng.uniform(-3, 3);
      Eigen::Vector2d mean, var, mo, vo;
      model.posterior(x, &mean, &var);
      oracle::gp_posterior(ds, {h, h}, plant, x, &mo, &vo);
      ok = (mean - mo).cwiseAbs().maxCoeff() < 1e-8 && (var - vo).cwiseAbs().maxCoeff() < 1e-8;
    }
    report("GP posterior matches dense-solve oracle", ok);
  }
  {
    PolicyConfig pc;
    pc.n_basis = 32;
    const PolicyParams policy = init_policy(derive_seed(args.seed, 1), pc);
    Rng rng(5);
    bool ok = true;
    for (int i = 0; i < 20000 && ok; ++i) {
      JointState s;
      s.q << rng.uniform(-6, 6), rng.uniform(-6, 6);
      s.qd << rng.uniform(-30, 30), rng.uniform(-30, 30);
      ok = std::abs(policy_eval(policy, s)) < policy.u_max;
    }
    report("policy output strictly inside the torque bound", ok);
  }
  {
    bool ok = true;
    for (int k = 0; k <= 25 && ok; ++k)
      ok = gamma_schedule(k, 5, 10) == std::clamp((k - 5.0) / 10.0, 0.0, 1.0);
    report("curriculum schedule matches clip((k-5)/10, 0, 1)", ok);
  }
  {
    Eigen::Matrix4d a;
    Eigen::Vector4d b;
    linearize_at_goal(plant, &a, &b);
    Eigen::Matrix4d q = Eigen::Matrix4d::Zero();
    q(0, 0) = q(1, 1) = cfg.get_double("lqr.q_pos");
    q(2, 2) = q(3, 3) = cfg.get_double("lqr.q_vel");
    const LqrDesign d = lqr_gain(a, b, q, cfg.get_double("lqr.r"));
    report("Riccati residual < 1e-8", d.residual < 1e-8);
  }
  {
    // small taped-rollout gradient check against central differences
    GpDataset ds;
    ds.ts = cfg.get_double("control.dt");
    Rng rng(7);
    for (int i = 0; i < 15; ++i) {
      GpInput x;
      x << rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3), rng.uniform(-3, 3),
          rng.uniform(-2, 2);
      ds.append(x, prior_mean(x, plant, ds.ts));
    }
    KernelHyp h;
    h.signal_var = 0.01;
    h.noise_var = 1e-6;
    const GpModel model(ds, {h, h}, plant);
    PolicyConfig pc;
    pc.n_basis = 6;
    const PolicyParams policy = init_policy(11, pc);
    OptimizerConfig oc;
    oc.particles = 2;
    oc.horizon_steps = 5;
    std::vector<JointState> starts(2);
    starts[0].q << 0.4, -0.2;
    starts[1].q << -0.8, 0.3;
    Eigen::MatrixXd noise(2, 10);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 10; ++j) noise(i, j) = rng.normal();
    const TapeFn fn =
        make_rollout_objective(model, policy.n_basis(), policy.u_max, starts, noise, oc);
    const Eigen::VectorXd flat = flatten_params(policy);
    const FiniteDiffReport rep =
        finite_diff_check(fn, std::span<const double>(flat.data(), flat.size()), 1e-5);
    report("rollout gradient matches finite differences", rep.max_rel_error < 1e-4);
  }

  std::printf(failures == 0 ? "all checks passed\n" : "%d check(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"model-based swing-up laboratory for the underactuated double pendulum"};
  app.require_subcommand(1);

  CommonArgs sim_args, train_args, eval_args, bench_args, check_args;
  std::string sim_policy, sim_lqr, eval_policy, eval_lqr;
  double sim_duration = 10.0, sim_torque = 0.0;
  std::string train_mode = "incremental";
  int eval_episodes = 5, bench_episodes = 5;
  std::vector<std::string> bench_controllers;

  CLI::App* sim = app.add_subcommand("simulate", "open-loop or closed-loop episode to CSV");
  add_common(sim, &sim_args);
  sim->add_option("--policy", sim_policy, "policy checkpoint (closed loop when given)");
  sim->add_option("--lqr", sim_lqr, "LQR assets JSON (acrobot)");
  sim->add_option("--duration", sim_duration, "episode length [s]");
  sim->add_option("--torque", sim_torque, "constant open-loop torque [N m]");

  CLI::App* tr = app.add_subcommand("train", "curriculum training run");
  add_common(tr, &train_args);
  tr->add_option("--mode", train_mode, "initial-distribution mode")
      ->check(CLI::IsMember({"incremental", "standard"}));

  CLI::App* ev = app.add_subcommand("evaluate", "scored 60 s episodes with random resets");
  add_common(ev, &eval_args);
  ev->add_option("--policy", eval_policy, "policy checkpoint")->required();
  ev->add_option("--lqr", eval_lqr, "LQR assets JSON (acrobot)");
  ev->add_option("--episodes", eval_episodes, "episode count");

  CLI::App* be = app.add_subcommand("benchmark", "score table across controllers");
  add_common(be, &bench_args);
  be->add_option("--controller", bench_controllers, "name=policy.json[:lqr.json] (repeatable)")
      ->required();
  be->add_option("--episodes", bench_episodes, "episodes per controller");

  CLI::App* ck = app.add_subcommand("check", "run the oracle/property self-checks");
  add_common(ck, &check_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run_simulate(sim_args, sim_policy, sim_lqr, sim_duration, sim_torque);
    if (tr->parsed()) return run_train(train_args, train_mode);
    if (ev->parsed()) return run_evaluate(eval_args, eval_policy, eval_lqr, eval_episodes);
    if (be->parsed()) return run_bench_cmd(bench_args, bench_controllers, bench_episodes);
    if (ck->parsed()) return run_check(check_args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
