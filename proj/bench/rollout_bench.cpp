// Throughput comparison of the particle-rollout kernels: serial reference vs
// OpenMP, plain evaluation vs recorded gradient, and the per-phase split.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <string>

#include "pendlab/rng.hpp"
#include "pendlab/rollout.hpp"

using namespace pendlab;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

GpModel make_model(const PlantParams& plant, int points) {
  GpDataset ds;
  ds.ts = 0.02;
  Rng rng(7);
  for (int i = 0; i < points; ++i) {
    GpInput x;
    x << rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-8, 8), rng.uniform(-8, 8),
        rng.uniform(-3, 3);
    ds.append(x, prior_mean(x, plant, ds.ts) + 0.05 * Eigen::Vector2d(rng.normal(), rng.normal()));
  }
  KernelHyp h;
  h.lengthscales << 1.5, 1.5, 3.0, 3.0, 2.0;
  h.signal_var = 0.02;
  h.noise_var = 1e-6;
  return GpModel(ds, {h, h}, plant);
}

}  // namespace

int main(int argc, char** argv) {
  int particles = 200;
  int horizon = 150;
  int n_basis = 100;
  int points = 250;
  int reps = 3;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto next = [&] { return std::stoi(argv[++i]); };
    if (a == "--particles") particles = next();
    else if (a == "--horizon") horizon = next();
    else if (a == "--basis") n_basis = next();
    else if (a == "--points") points = next();
    else if (a == "--reps") reps = next();
    else if (a == "--quick") { reps = 1; particles = 64; horizon = 50; points = 100; }
  }

  PlantParams plant;
  const GpModel model = make_model(plant, points);
  PolicyConfig pc;
  pc.n_basis = n_basis;
  const PolicyParams policy = init_policy(3, pc);
  const InitialDistribution dist = InitialDistribution::nominal(0.005);
  OptimizerConfig cfg;
  cfg.particles = particles;
  cfg.horizon_steps = horizon;

  std::printf("particles=%d horizon=%d basis=%d gp_points=%d threads=%d\n", particles, horizon,
              n_basis, points, omp_get_max_threads());
  std::printf("%-34s %12s %14s\n", "kernel", "time [s]", "particle-steps/s");

  const double work = static_cast<double>(particles) * horizon * reps;
  double serial_plain = 0.0, parallel_plain = 0.0, serial_grad = 0.0, parallel_grad = 0.0;

  {
    cfg.exec = ExecMode::kSerial;
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) rollout_particles(model, policy, dist, cfg, 100 + r);
    serial_plain = seconds_since(t0);
    std::printf("%-34s %12.3f %14.3e\n", "rollout (serial reference)", serial_plain,
                work / serial_plain);
  }
  {
    cfg.exec = ExecMode::kParallel;
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) rollout_particles(model, policy, dist, cfg, 100 + r);
    parallel_plain = seconds_since(t0);
    std::printf("%-34s %12.3f %14.3e\n", "rollout (OpenMP)", parallel_plain,
                work / parallel_plain);
  }
  const Eigen::VectorXd mask = Eigen::VectorXd::Ones(n_basis);
  {
    cfg.exec = ExecMode::kSerial;
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) rollout_particles_grad(model, policy, mask, dist, cfg, 100 + r);
    serial_grad = seconds_since(t0);
    std::printf("%-34s %12.3f %14.3e\n", "rollout+gradient (serial reference)", serial_grad,
                work / serial_grad);
  }
  {
    cfg.exec = ExecMode::kParallel;
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) rollout_particles_grad(model, policy, mask, dist, cfg, 100 + r);
    parallel_grad = seconds_since(t0);
    std::printf("%-34s %12.3f %14.3e\n", "rollout+gradient (OpenMP)", parallel_grad,
                work / parallel_grad);
  }

  std::printf("speedup plain %.2fx, gradient %.2fx (threads=%d)\n",
              serial_plain / parallel_plain, serial_grad / parallel_grad,
              omp_get_max_threads());

  // serial/parallel agreement is part of the contract, not just a benchmark
  cfg.exec = ExecMode::kSerial;
  const double j_serial = rollout_particles(model, policy, dist, cfg, 42).cost;
  cfg.exec = ExecMode::kParallel;
  const double j_parallel = rollout_particles(model, policy, dist, cfg, 42).cost;
  std::printf("serial J=%.17g parallel J=%.17g identical=%s\n", j_serial, j_parallel,
              j_serial == j_parallel ? "yes" : "NO");
  return j_serial == j_parallel ? 0 : 1;
}
