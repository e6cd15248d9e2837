#include "pendlab/rollout.hpp"

#include <omp.h>

#include <cstdio>
#include <fstream>

#include "pendlab/rng.hpp"

namespace pendlab {

double saturated_cost(const JointState& state, double cost_lengthscale) {
  if (!(cost_lengthscale > 0))
    throw std::invalid_argument("saturated_cost: lengthscale must be positive");
  const double w1 = wrap_angle(state.q[0]);
  const double w2 = wrap_angle(state.q[1]);
  const double e1 = std::abs(w1) - M_PI;
  const double e2 = std::abs(w2);
  const double s = e1 * e1 + e2 * e2;
  return 1.0 - std::exp(-(s / cost_lengthscale));
}

namespace {

Var saturated_cost_var(Tape& tape, Var q1, Var q2, double cost_lengthscale) {
  const Var e1 = abs(wrap_angle(q1)) - M_PI;
  const Var e2 = abs(wrap_angle(q2));
  const Var s = square(e1) + square(e2);
  return 1.0 - exp(-(s / cost_lengthscale));
}

Eigen::MatrixXd batch_noise(int n, int t, std::uint64_t seed) {
  Eigen::MatrixXd noise(n, 2 * t);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 0x40153, static_cast<std::uint64_t>(i)));
    for (int k = 0; k < 2 * t; ++k) noise(i, k) = rng.normal();
  }
  return noise;
}

}  // namespace

std::vector<JointState> sample_initial_particles(const InitialDistribution& dist, int n,
                                                 std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_initial_particles: n must be >= 1");
  if ((dist.half_width.array() < 0).any())
    throw std::invalid_argument("initial distribution bounds must be non-negative");
  std::vector<JointState> out(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 0x51A7, static_cast<std::uint64_t>(i)));
    Eigen::Vector4d x;
    for (int d = 0; d < 4; ++d) x[d] = rng.uniform(-dist.half_width[d], dist.half_width[d]);
    out[i].q = x.head<2>();
    out[i].qd = x.tail<2>();
  }
  return out;
}

RolloutResult rollout_particles(const GpModel& model, const PolicyParams& params,
                                const InitialDistribution& dist, const OptimizerConfig& config,
                                std::uint64_t seed) {
  config.validate();
  const int n = config.particles;
  const int t_end = config.horizon_steps;
  const double ts = model.ts();
  const double half_ts = 0.5 * ts;
  const double lc = config.cost_lengthscale;

  RolloutResult res;
  ParticleBatch& batch = res.batch;
  batch.states.assign(t_end + 1, Eigen::Matrix<double, Eigen::Dynamic, 4>(n, 4));
  batch.torques = Eigen::MatrixXd::Zero(n, t_end);
  batch.noise = batch_noise(n, t_end, seed);
  batch.particle_cost = Eigen::VectorXd::Zero(n);
  batch.diverged_at.assign(n, -1);

  const std::vector<JointState> starts =
      sample_initial_particles(dist, n, derive_seed(seed, 0x51A7D));

  const int n_blocks = (n + kParticleBlock - 1) / kParticleBlock;

#pragma omp parallel for schedule(dynamic) if (config.exec == ExecMode::kParallel)
  for (int b = 0; b < n_blocks; ++b) {
    const int n0 = b * kParticleBlock;
    const int nb = std::min(kParticleBlock, n - n0);

    std::vector<JointState> state(nb);
    std::vector<double> cost(nb);
    std::vector<int> dead(nb, -1);
    for (int i = 0; i < nb; ++i) {
      state[i] = starts[n0 + i];
      batch.states[0].row(n0 + i) << state[i].q[0], state[i].q[1], state[i].qd[0], state[i].qd[1];
      cost[i] = saturated_cost(state[i], lc);
    }

    Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor> queries;
    GpBatchResult gp;
    std::vector<int> live;
    for (int t = 0; t < t_end; ++t) {
      live.clear();
      for (int i = 0; i < nb; ++i)
        if (dead[i] < 0) live.push_back(i);

      queries.resize(static_cast<int>(live.size()), kGpInputDim);
      for (std::size_t r = 0; r < live.size(); ++r) {
        const int i = live[r];
        const double u = policy_eval(params, state[i]);
        batch.torques(n0 + i, t) = u;
        queries.row(r) << state[i].q[0], state[i].q[1], state[i].qd[0], state[i].qd[1], u;
      }
      if (!live.empty()) model.query_block(queries, false, &gp);

      for (std::size_t r = 0; r < live.size(); ++r) {
        const int i = live[r];
        const double u = queries(r, 4);
        Eigen::Vector2d qdd;
        detail::accel<double>(state[i].q[0], state[i].q[1], state[i].qd[0], state[i].qd[1], u,
                              model.plant(), &qdd[0], &qdd[1]);
        Eigen::Vector2d delta;
        for (int dof = 0; dof < 2; ++dof) {
          delta[dof] = ts * qdd[dof] + gp.corr(r, dof);
          if (!config.deterministic_model)
            delta[dof] = delta[dof] +
                         std::sqrt(gp.var(r, dof)) * batch.noise(n0 + i, 2 * t + dof);
        }
        JointState next;
        next.qd[0] = state[i].qd[0] + delta[0];
        next.qd[1] = state[i].qd[1] + delta[1];
        next.q[0] = state[i].q[0] + ts * state[i].qd[0] + half_ts * delta[0];
        next.q[1] = state[i].q[1] + ts * state[i].qd[1] + half_ts * delta[1];

        if (!next.finite() || next.qd.cwiseAbs().maxCoeff() > config.divergence_qd) {
          dead[i] = t + 1;
          cost[i] += static_cast<double>(t_end - t);  // pinned at max cost
        } else {
          state[i] = next;
          cost[i] += saturated_cost(next, lc);
        }
      }
      for (int i = 0; i < nb; ++i)
        batch.states[t + 1].row(n0 + i) << state[i].q[0], state[i].q[1], state[i].qd[0],
            state[i].qd[1];
    }
    for (int i = 0; i < nb; ++i) {
      batch.particle_cost[n0 + i] = cost[i];
      batch.diverged_at[n0 + i] = dead[i];
    }
  }

  double total = 0.0;
  for (int i = 0; i < n; ++i) total += batch.particle_cost[i];
  res.cost = total / static_cast<double>(n);
  batch.diverged_count = 0;
  for (int i = 0; i < n; ++i)
    if (batch.diverged_at[i] >= 0) ++batch.diverged_count;
  return res;
}

namespace {

struct PolicyLeaves {
  std::vector<Var> weights;  // masked nodes fed to the policy
  std::vector<Var> centers;
  std::vector<Var> l_factor;
  std::vector<Var> raw;  // the P leaves in flat order
};

PolicyLeaves push_policy_leaves(Tape& tape, const Eigen::VectorXd& flat, int n_basis,
                                const Eigen::VectorXd& weight_mask) {
  PolicyLeaves lv;
  const int p = static_cast<int>(flat.size());
  lv.raw.reserve(p);
  for (int i = 0; i < p; ++i) lv.raw.push_back(tape.leaf(flat[i]));
  lv.weights.reserve(n_basis);
  for (int i = 0; i < n_basis; ++i) lv.weights.push_back(lv.raw[i] * weight_mask[i]);
  lv.centers.assign(lv.raw.begin() + n_basis, lv.raw.begin() + n_basis * (1 + kFeatureDim));
  lv.l_factor.assign(lv.raw.begin() + n_basis * (1 + kFeatureDim), lv.raw.end());
  return lv;
}

// Rollout of particles [n0, n0+nb) recorded on one tape; returns per-particle
// cost variables. Mirrors rollout_particles step for step.
std::vector<Var> taped_rollout_block(Tape& tape, const GpModel& model,
                                     const OptimizerConfig& config, double u_max,
                                     const PolicyLeaves& leaves,
                                     const std::vector<JointState>& starts,
                                     const Eigen::MatrixXd& noise, int n0, int nb,
                                     std::vector<int>* dead_out = nullptr) {
  const int t_end = config.horizon_steps;
  const double ts = model.ts();
  const double half_ts = 0.5 * ts;
  const double lc = config.cost_lengthscale;

  PolicyVars pvars{leaves.weights, leaves.centers, leaves.l_factor};

  std::vector<Var> q1(nb), q2(nb), qd1(nb), qd2(nb), cost(nb);
  std::vector<int> dead(nb, -1);
  for (int i = 0; i < nb; ++i) {
    const JointState& s = starts[n0 + i];
    q1[i] = tape.leaf(s.q[0]);
    q2[i] = tape.leaf(s.q[1]);
    qd1[i] = tape.leaf(s.qd[0]);
    qd2[i] = tape.leaf(s.qd[1]);
    cost[i] = saturated_cost_var(tape, q1[i], q2[i], lc);
  }

  Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor> queries;
  GpBatchResult gp;
  std::vector<int> live;
  std::vector<Var> torque(nb);
  std::array<std::int32_t, kGpInputDim> idx5;
  std::array<double, kGpInputDim> par5;

  for (int t = 0; t < t_end; ++t) {
    live.clear();
    for (int i = 0; i < nb; ++i)
      if (dead[i] < 0) live.push_back(i);

    queries.resize(static_cast<int>(live.size()), kGpInputDim);
    for (std::size_t r = 0; r < live.size(); ++r) {
      const int i = live[r];
      torque[i] = policy_eval_var(tape, u_max, pvars, q1[i], q2[i], qd1[i], qd2[i]);
      queries.row(r) << q1[i].value(), q2[i].value(), qd1[i].value(), qd2[i].value(),
          torque[i].value();
    }
    if (!live.empty()) model.query_block(queries, true, &gp);

    for (std::size_t r = 0; r < live.size(); ++r) {
      const int i = live[r];
      idx5 = {q1[i].idx, q2[i].idx, qd1[i].idx, qd2[i].idx, torque[i].idx};

      Var prior1, prior2;
      detail::accel<Var>(q1[i], q2[i], qd1[i], qd2[i], torque[i], model.plant(), &prior1,
                         &prior2);

      Var delta[2];
      for (int dof = 0; dof < 2; ++dof) {
        for (int d = 0; d < kGpInputDim; ++d) par5[d] = gp.dcorr[dof](r, d);
        const Var corr = tape.push_fused(gp.corr(r, dof), idx5, par5, "gp_correction");
        delta[dof] = ts * (dof == 0 ? prior1 : prior2) + corr;
        if (!config.deterministic_model) {
          for (int d = 0; d < kGpInputDim; ++d) par5[d] = gp.dvar[dof](r, d);
          const Var var = tape.push_fused(gp.var(r, dof), idx5, par5, "gp_variance");
          delta[dof] = delta[dof] + sqrt(var) * noise(n0 + i, 2 * t + dof);
        }
      }
      const Var nqd1 = qd1[i] + delta[0];
      const Var nqd2 = qd2[i] + delta[1];
      const Var nq1 = q1[i] + ts * qd1[i] + half_ts * delta[0];
      const Var nq2 = q2[i] + ts * qd2[i] + half_ts * delta[1];

      const double m1 = std::abs(nqd1.value());
      const double m2 = std::abs(nqd2.value());
      const bool finite = std::isfinite(nq1.value()) && std::isfinite(nq2.value()) &&
                          std::isfinite(nqd1.value()) && std::isfinite(nqd2.value());
      if (!finite || std::max(m1, m2) > config.divergence_qd) {
        dead[i] = t + 1;
        cost[i] = cost[i] + static_cast<double>(t_end - t);
      } else {
        q1[i] = nq1;
        q2[i] = nq2;
        qd1[i] = nqd1;
        qd2[i] = nqd2;
        cost[i] = cost[i] + saturated_cost_var(tape, nq1, nq2, lc);
      }
    }
  }
  if (dead_out)
    for (int i = 0; i < nb; ++i) (*dead_out)[n0 + i] = dead[i];
  return cost;
}

}  // namespace

RolloutGradResult rollout_particles_grad(const GpModel& model, const PolicyParams& params,
                                         const Eigen::VectorXd& weight_mask,
                                         const InitialDistribution& dist,
                                         const OptimizerConfig& config, std::uint64_t seed) {
  config.validate();
  if (weight_mask.size() != params.n_basis())
    throw std::invalid_argument("rollout_particles_grad: mask size mismatch");
  const int n = config.particles;
  const int t_end = config.horizon_steps;
  const int p = params.n_params();
  const Eigen::VectorXd flat = flatten_params(params);

  const std::vector<JointState> starts =
      sample_initial_particles(dist, n, derive_seed(seed, 0x51A7D));
  const Eigen::MatrixXd noise = batch_noise(n, t_end, seed);

  const int n_blocks = (n + kParticleBlock - 1) / kParticleBlock;
  Eigen::MatrixXd block_grads = Eigen::MatrixXd::Zero(n_blocks, p);
  Eigen::VectorXd costs(n);
  std::vector<int> dead(n, -1);
  std::string error;

#pragma omp parallel if (config.exec == ExecMode::kParallel)
  {
    Tape tape;
#pragma omp for schedule(dynamic)
    for (int b = 0; b < n_blocks; ++b) {
      try {
        const int n0 = b * kParticleBlock;
        const int nb = std::min(kParticleBlock, n - n0);
        tape.clear();
        const PolicyLeaves leaves = push_policy_leaves(tape, flat, params.n_basis(), weight_mask);
        const std::vector<Var> cost = taped_rollout_block(tape, model, config, params.u_max,
                                                          leaves, starts, noise, n0, nb, &dead);
        Var total = cost[0];
        for (int i = 1; i < nb; ++i) total = total + cost[i];
        tape.backward(total);
        for (int j = 0; j < p; ++j) block_grads(b, j) = tape.grad(leaves.raw[j]);
        for (int i = 0; i < nb; ++i) costs[n0 + i] = cost[i].value();
      } catch (const std::exception& e) {
#pragma omp critical
        if (error.empty()) error = e.what();
      }
    }
  }
  if (!error.empty()) throw std::runtime_error("rollout_particles_grad: " + error);

  RolloutGradResult out;
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += costs[i];
  out.cost = total / static_cast<double>(n);
  out.grad = Eigen::VectorXd::Zero(p);
  for (int b = 0; b < n_blocks; ++b) out.grad += block_grads.row(b).transpose();
  out.grad /= static_cast<double>(n);
  out.diverged_count = 0;
  for (int i = 0; i < n; ++i)
    if (dead[i] >= 0) ++out.diverged_count;
  return out;
}

TapeFn make_rollout_objective(const GpModel& model, int n_basis, double u_max,
                              std::vector<JointState> starts, Eigen::MatrixXd noise,
                              const OptimizerConfig& config) {
  return [&model, n_basis, u_max, starts = std::move(starts), noise = std::move(noise),
          config](Tape& tape, std::span<const Var> leaves) -> Var {
    const int n = static_cast<int>(starts.size());
    PolicyLeaves lv;
    lv.raw.assign(leaves.begin(), leaves.end());
    lv.weights.assign(leaves.begin(), leaves.begin() + n_basis);
    lv.centers.assign(leaves.begin() + n_basis, leaves.begin() + n_basis * (1 + kFeatureDim));
    lv.l_factor.assign(leaves.begin() + n_basis * (1 + kFeatureDim), leaves.end());
    const std::vector<Var> cost =
        taped_rollout_block(tape, model, config, u_max, lv, starts, noise, 0, n);
    Var total = cost[0];
    for (int i = 1; i < n; ++i) total = total + cost[i];
    return total / static_cast<double>(n);
  };
}

AdamLoopResult adam_loop(const StepObjective& objective, Eigen::VectorXd x0,
                         const OptimizerConfig& config) {
  AdamLoopResult res;
  res.best_x = x0;
  Eigen::VectorXd x = std::move(x0);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd grad(x.size());
  double lr = config.learning_rate;
  double best_smoothed = std::numeric_limits<double>::infinity();
  int accepted = 0;

  for (int step = 0; step < config.max_steps; ++step) {
    double cost;
    try {
      cost = objective(x, step, &grad);
    } catch (const std::exception&) {
      cost = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(cost) || !grad.allFinite()) {
      lr *= 0.5;
      ++res.rejected_steps;
      continue;
    }
    const double gnorm = grad.norm();
    if (config.grad_clip > 0 && gnorm > config.grad_clip) grad *= config.grad_clip / gnorm;

    res.history.push_back({step, cost, lr, config.dropout_rate});

    // smoothed cost over the trailing window; snapshot of the params that
    // produced the new best
    const int len = static_cast<int>(res.history.size());
    const int w = std::min(len, config.exit_window);
    double ma = 0.0;
    for (int i = len - w; i < len; ++i) ma += res.history[i].cost;
    ma /= w;
    if (ma < best_smoothed) {
      best_smoothed = ma;
      res.best_x = x;
    }

    ++accepted;
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(0.9, accepted);
    const double bc2 = 1.0 - std::pow(0.999, accepted);
    for (int j = 0; j < x.size(); ++j)
      x[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + 1e-8);

    if (len >= config.exit_window + config.exit_patience) {
      const int then_end = len - config.exit_patience;
      double ma_then = 0.0;
      for (int i = then_end - config.exit_window; i < then_end; ++i)
        ma_then += res.history[i].cost;
      ma_then /= config.exit_window;
      if (ma_then - ma < config.exit_rel_tol * std::abs(ma_then)) {
        res.exit_triggered = true;
        break;
      }
    }
  }
  return res;
}

OptimizeResult optimize_policy(const GpModel& model, const PolicyParams& params,
                               const InitialDistribution& dist, const OptimizerConfig& config,
                               std::uint64_t seed) {
  config.validate();
  const int nb = params.n_basis();

  const StepObjective objective = [&](const Eigen::VectorXd& x, int step,
                                      Eigen::VectorXd* grad) -> double {
    const PolicyParams p = unflatten_params(x, nb, params.u_max);
    Rng mask_rng(derive_seed(seed, 0xD0, static_cast<std::uint64_t>(step)));
    const Eigen::VectorXd mask = dropout_mask(nb, config.dropout_rate, mask_rng);
    const RolloutGradResult r = rollout_particles_grad(
        model, p, mask, dist, config, derive_seed(seed, 0xA0, static_cast<std::uint64_t>(step)));
    *grad = r.grad;
    return r.cost;
  };

  const AdamLoopResult loop = adam_loop(objective, flatten_params(params), config);
  OptimizeResult out;
  out.params = unflatten_params(loop.best_x, nb, params.u_max);
  out.history = loop.history;
  out.rejected_steps = loop.rejected_steps;
  out.exit_triggered = loop.exit_triggered;
  return out;
}

void save_cost_history_csv(const std::vector<CostHistoryRow>& history, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write cost history: " + path);
  f << "step,J_hat,lr,dropout_rate\n";
  char buf[160];
  for (const auto& row : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", row.step, row.cost,
                  row.learning_rate, row.dropout_rate);
    f << buf;
  }
}

}  // namespace pendlab
