#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "pendlab/gp_model.hpp"
#include "pendlab/rng.hpp"
#include "support/oracles.hpp"

using namespace pendlab;

namespace {

PlantParams default_params() { return PlantParams{}; }

GpInput random_input(Rng& rng, double qscale = 3.0, double vscale = 6.0, double uscale = 3.0) {
  GpInput x;
  x << rng.uniform(-qscale, qscale), rng.uniform(-qscale, qscale), rng.uniform(-vscale, vscale),
      rng.uniform(-vscale, vscale), rng.uniform(-uscale, uscale);
  return x;
}

// dataset with targets = prior mean + residual(x), so the GP sees `residual`
GpDataset synthetic_dataset(int n, std::uint64_t seed, const PlantParams& plant, double ts,
                            const std::function<double(const GpInput&, int)>& residual) {
  GpDataset ds;
  ds.ts = ts;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const GpInput x = random_input(rng);
    const Eigen::Vector2d prior = prior_mean(x, plant, ts);
    ds.append(x, {prior[0] + residual(x, 0), prior[1] + residual(x, 1)});
  }
  return ds;
}

std::array<KernelHyp, 2> unit_hyp(double sv = 1.0, double noise = 1e-4) {
  KernelHyp h;
  h.signal_var = sv;
  h.noise_var = noise;
  return {h, h};
}

}  // namespace

TEST_CASE("se_kernel basics and Gram positive definiteness") {
  KernelHyp hyp;
  hyp.lengthscales << 1.0, 2.0, 0.5, 1.5, 3.0;
  hyp.signal_var = 2.5;
  hyp.noise_var = 1e-4;
  Rng rng(3);
  const GpInput a = random_input(rng);
  const GpInput b = random_input(rng);
  CHECK(se_kernel(a, a, hyp) == doctest::Approx(hyp.signal_var));
  CHECK(se_kernel(a, b, hyp) == doctest::Approx(se_kernel(b, a, hyp)));
  CHECK(se_kernel(a, b, hyp) > 0.0);
  CHECK(se_kernel(a, b, hyp) < hyp.signal_var);

  const int m = 20;
  Eigen::MatrixXd gram(m, m);
  std::vector<GpInput> xs;
  for (int i = 0; i < m; ++i) xs.push_back(random_input(rng));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) gram(i, j) = se_kernel(xs[i], xs[j], hyp);
  gram.diagonal().array() += hyp.noise_var;
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("prior mean is the scaled forward dynamics, exactly") {
  const PlantParams p = default_params();
  CHECK(prior_mean(GpInput::Zero(), p, 0.02).cwiseAbs().maxCoeff() == 0.0);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const GpInput x = random_input(rng);
    JointState s;
    s.q << x[0], x[1];
    s.qd << x[2], x[3];
    const Eigen::Vector2d qdd = forward_dynamics(s, x[4], p);
    // bitwise identity in the computed direction
    CHECK((prior_mean(x, p, 0.02) - 0.02 * qdd).cwiseAbs().maxCoeff() == 0.0);
    // quotient form agrees to rounding
    const Eigen::Vector2d lhs = prior_mean(x, p, 0.02) / 0.02;
    CHECK((lhs - qdd).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, qdd.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("prior mean degrades as the sampling time grows") {
  const PlantParams p = default_params();
  JointState s;
  s.q << M_PI - 0.3, 0.2;
  s.qd << 1.0, -0.5;
  const double u = 0.5;

  auto true_delta = [&](double ts) {
    JointState cur = s;
    const int steps = static_cast<int>(std::llround(ts / 0.002));
    for (int i = 0; i < steps; ++i) cur = rk4_step(cur, u, 0.002, p);
    return Eigen::Vector2d(cur.qd - s.qd);
  };
  const GpInput x = make_gp_input(s, u);
  const double resid_20ms = (prior_mean(x, p, 0.02) - true_delta(0.02)).cwiseAbs().maxCoeff();
  const double resid_2ms = (prior_mean(x, p, 0.002) - true_delta(0.002)).cwiseAbs().maxCoeff();
  CHECK(resid_20ms > 0.0);
  CHECK(resid_20ms > 5.0 * resid_2ms);
}

TEST_CASE("posterior with an empty dataset recovers the prior") {
  const PlantParams p = default_params();
  GpDataset empty;
  empty.ts = 0.02;
  const GpModel model(empty, unit_hyp(1.7), p);
  Rng rng(7);
  const GpInput x = random_input(rng);
  Eigen::Vector2d mean, var;
  model.posterior(x, &mean, &var);
  CHECK((mean - prior_mean(x, p, 0.02)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(var[0] == 1.7);
  CHECK(var[1] == 1.7);
}

TEST_CASE("noiseless interpolation limit at a training input") {
  const PlantParams p = default_params();
  const GpDataset ds = synthetic_dataset(15, 11, p, 0.02, [](const GpInput& x, int dof) {
    return 0.3 * std::sin(x[0] + dof) * std::cos(0.5 * x[2]);
  });
  const GpModel model(ds, unit_hyp(1.0, 1e-8), p);
  for (int i = 0; i < 5; ++i) {
    const GpInput x = ds.inputs.row(i).transpose();
    Eigen::Vector2d mean, var;
    model.posterior(x, &mean, &var);
    CHECK(std::abs(mean[0] - ds.targets(i, 0)) < 1e-4);
    CHECK(std::abs(mean[1] - ds.targets(i, 1)) < 1e-4);
    CHECK(var[0] < 1e-5);
    CHECK(var[1] < 1e-5);
  }
}

TEST_CASE("posterior matches the dense-solve oracle") {
  const PlantParams p = default_params();
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const GpDataset ds =
        synthetic_dataset(30, 100 + trial, p, 0.02, [&](const GpInput& x, int dof) {
          return 0.2 * std::sin(x[0] * (1 + dof)) + 0.1 * std::tanh(x[4]);
        });
    KernelHyp h;
    h.lengthscales << 1.2, 0.8, 2.0, 1.5, 1.0;
    h.signal_var = 0.9;
    h.noise_var = 1e-5;
    const std::array<KernelHyp, 2> hyp{h, h};
    const GpModel model(ds, hyp, p);
    for (int k = 0; k < 10; ++k) {
      const GpInput x = random_input(rng);
      Eigen::Vector2d mean, var, mean_o, var_o;
      model.posterior(x, &mean, &var);
      oracle::gp_posterior(ds, hyp, p, x, &mean_o, &var_o);
      for (int dof = 0; dof < 2; ++dof) {
        CHECK(std::abs(mean[dof] - mean_o[dof]) <=
              1e-8 * std::max(1.0, std::abs(mean_o[dof])));
        CHECK(std::abs(var[dof] - var_o[dof]) <= 1e-8 * std::max(1.0, std::abs(var_o[dof])));
      }
    }
  }
}

TEST_CASE("hyperparameter fitting recovers a known squared-exponential GP") {
  const PlantParams p = default_params();
  const int n = 200;
  Rng rng(17);
  GpDataset ds;
  ds.ts = 0.02;
  Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor> xs(n, kGpInputDim);
  for (int i = 0; i < n; ++i) xs.row(i) = random_input(rng, 2.0, 2.0, 2.0).transpose();

  KernelHyp truth;
  truth.lengthscales.setOnes();
  truth.signal_var = 1.0;
  truth.noise_var = 1e-4;
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      k(i, j) = se_kernel(xs.row(i).transpose(), xs.row(j).transpose(), truth);
  k.diagonal().array() += truth.noise_var;
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(k).matrixL();
  Eigen::MatrixXd z(n, 2);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 2; ++d) z(i, d) = rng.normal();
  const Eigen::MatrixXd draws = l * z;

  ds.inputs = xs;
  ds.targets.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const GpInput x = xs.row(i).transpose();
    const Eigen::Vector2d prior = prior_mean(x, p, ds.ts);
    ds.targets(i, 0) = prior[0] + draws(i, 0);
    ds.targets(i, 1) = prior[1] + draws(i, 1);
  }

  FitConfig cfg;
  cfg.max_iters = 400;
  const FitResult fit = fit_hyperparameters(ds, p, cfg);
  for (int dof = 0; dof < 2; ++dof) {
    for (int d = 0; d < kGpInputDim; ++d) {
      CHECK(fit.hyp[dof].lengthscales[d] > 0.5);
      CHECK(fit.hyp[dof].lengthscales[d] < 2.0);
    }
    CHECK(fit.hyp[dof].signal_var > 0.25);
    CHECK(fit.hyp[dof].signal_var < 4.0);
  }
}

TEST_CASE("doubling the residuals roughly quadruples the fitted signal variance") {
  const PlantParams p = default_params();
  const auto residual = [](const GpInput& x, int dof) {
    return 0.4 * std::sin(x[0] + 0.3 * dof) * std::exp(-0.1 * x[2] * x[2]) + 0.05 * x[4];
  };
  GpDataset ds = synthetic_dataset(120, 19, p, 0.02, residual);
  GpDataset ds2 = ds;
  for (int i = 0; i < ds2.size(); ++i) {
    const GpInput x = ds2.inputs.row(i).transpose();
    const Eigen::Vector2d prior = prior_mean(x, p, ds2.ts);
    ds2.targets.row(i) = (prior + 2.0 * (ds.targets.row(i).transpose() - prior)).transpose();
  }
  FitConfig cfg;
  cfg.max_iters = 300;
  const FitResult fit1 = fit_hyperparameters(ds, p, cfg);
  const FitResult fit2 = fit_hyperparameters(ds2, p, cfg);
  for (int dof = 0; dof < 2; ++dof) {
    const double ratio = fit2.hyp[dof].signal_var / fit1.hyp[dof].signal_var;
    CHECK(ratio > 2.0);
    CHECK(ratio < 8.0);
  }
}

TEST_CASE("degenerate identical targets hit the noise floor without failing") {
  const PlantParams p = default_params();
  GpDataset ds;
  ds.ts = 0.02;
  const GpInput x0 = GpInput::Zero();
  for (int i = 0; i < 12; ++i) ds.append(x0, prior_mean(x0, p, ds.ts));
  FitConfig cfg;
  cfg.max_iters = 100;
  const FitResult fit = fit_hyperparameters(ds, p, cfg);
  for (int dof = 0; dof < 2; ++dof) CHECK(fit.hyp[dof].noise_var >= 1e-8);
  // and the model can be built from it (jitter path allowed)
  const GpModel model(ds, fit.hyp, p);
  Eigen::Vector2d mean, var;
  model.posterior(x0, &mean, &var);
  CHECK(std::isfinite(mean[0]));
  CHECK(var.minCoeff() >= 0.0);
}

TEST_CASE("fit requires at least 10 points") {
  const PlantParams p = default_params();
  GpDataset ds = synthetic_dataset(9, 23, p, 0.02, [](const GpInput&, int) { return 0.0; });
  CHECK_THROWS_AS(fit_hyperparameters(ds, p), std::invalid_argument);
}

TEST_CASE("subset of data keeps the most recent rows in stable order") {
  const PlantParams p = default_params();
  const GpDataset ds = synthetic_dataset(100, 29, p, 0.02, [](const GpInput&, int) { return 0.0; });
  const GpDataset same = subset_of_data(ds, 200);
  CHECK(same.size() == 100);
  CHECK((same.inputs - ds.inputs).cwiseAbs().maxCoeff() == 0.0);

  const GpDataset cut = subset_of_data(ds, 40);
  CHECK(cut.size() == 40);
  CHECK((cut.inputs - ds.inputs.bottomRows(40)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cut.targets - ds.targets.bottomRows(40)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("subset posterior degradation against the full model is bounded") {
  const PlantParams p = default_params();
  const auto residual = [](const GpInput& x, int dof) {
    return 0.3 * std::sin(x[0] + dof) + 0.2 * std::cos(x[2] - x[4]);
  };
  const GpDataset full = synthetic_dataset(300, 31, p, 0.02, residual);
  const GpDataset sub = subset_of_data(full, 150);
  const auto hyp = unit_hyp(0.5, 1e-4);
  const GpModel model_full(full, hyp, p);
  const GpModel model_sub(sub, hyp, p);

  Rng rng(37);
  double rmse_full = 0.0, rmse_sub = 0.0;
  const int n_test = 100;
  for (int i = 0; i < n_test; ++i) {
    const GpInput x = random_input(rng);
    const Eigen::Vector2d truth(prior_mean(x, p, 0.02)[0] + residual(x, 0),
                                prior_mean(x, p, 0.02)[1] + residual(x, 1));
    Eigen::Vector2d mf, vf, ms, vs;
    model_full.posterior(x, &mf, &vf);
    model_sub.posterior(x, &ms, &vs);
    rmse_full += (mf - truth).squaredNorm();
    rmse_sub += (ms - truth).squaredNorm();
  }
  rmse_full = std::sqrt(rmse_full / n_test);
  rmse_sub = std::sqrt(rmse_sub / n_test);
  MESSAGE("held-out RMSE: full=", rmse_full, " subset=", rmse_sub);
  CHECK(rmse_sub < 10.0 * rmse_full + 0.05);
}

TEST_CASE("one-step prediction: mean recurrence and covariance structure") {
  const PlantParams p = default_params();
  const GpDataset ds = synthetic_dataset(25, 41, p, 0.02, [](const GpInput& x, int dof) {
    return 0.1 * std::sin(x[0] * (dof + 1));
  });
  const GpModel model(ds, unit_hyp(0.8, 1e-5), p);
  Rng rng(43);
  for (int i = 0; i < 20; ++i) {
    JointState s;
    s.q << rng.uniform(-3, 3), rng.uniform(-3, 3);
    s.qd << rng.uniform(-5, 5), rng.uniform(-5, 5);
    const double u = rng.uniform(-3, 3);
    Eigen::Vector2d mean_d, var_d;
    model.posterior(make_gp_input(s, u), &mean_d, &var_d);
    const GaussianState g = one_step_predict(s, u, model);
    const double ts = model.ts();
    CHECK(g.mean[2] == doctest::Approx(s.qd[0] + mean_d[0]).epsilon(1e-14));
    CHECK(g.mean[3] == doctest::Approx(s.qd[1] + mean_d[1]).epsilon(1e-14));
    CHECK(g.mean[0] == doctest::Approx(s.q[0] + ts * s.qd[0] + 0.5 * ts * mean_d[0]).epsilon(1e-14));
    for (int dof = 0; dof < 2; ++dof) {
      CHECK(g.cov(dof, dof) == doctest::Approx(0.25 * ts * ts * var_d[dof]));
      CHECK(g.cov(dof, 2 + dof) == doctest::Approx(0.5 * ts * var_d[dof]));
      CHECK(g.cov(2 + dof, 2 + dof) == doctest::Approx(var_d[dof]));
      CHECK(g.cov(0, 1) == 0.0);
      CHECK(g.cov(2, 3) == 0.0);
    }
  }
}

TEST_CASE("one-step prediction reduces to constant-velocity kinematics at equilibrium") {
  const PlantParams p = default_params();
  GpDataset empty;
  empty.ts = 0.02;
  const GpModel model(empty, unit_hyp(), p);
  JointState s;  // hanging equilibrium: prior delta is exactly zero
  s.qd << 0.0, 0.0;
  const GaussianState g = one_step_predict(s, 0.0, model);
  CHECK(g.mean[0] == 0.0);
  CHECK(g.mean[2] == 0.0);

  JointState moving;
  moving.q << 0.4, -0.2;
  moving.qd << 1.0, 2.0;
  // zero GP correction with an empty dataset: mean follows prior + kinematics
  const GaussianState g2 = one_step_predict(moving, 0.0, model);
  const Eigen::Vector2d prior = prior_mean(make_gp_input(moving, 0.0), p, 0.02);
  CHECK(g2.mean[0] == doctest::Approx(moving.q[0] + 0.02 * 1.0 + 0.01 * prior[0]));
}

TEST_CASE("reparameterized sampling matches the posterior moments") {
  const PlantParams p = default_params();
  const GpDataset ds = synthetic_dataset(20, 47, p, 0.02, [](const GpInput& x, int dof) {
    return 0.2 * std::cos(x[1] + dof);
  });
  const GpModel model(ds, unit_hyp(0.6, 1e-4), p);
  JointState s;
  s.q << 1.0, -0.5;
  s.qd << 2.0, 1.0;
  const double u = 0.7;

  const GaussianState g = one_step_predict(s, u, model);
  const JointState zero_noise = sample_next_state(s, u, model, Eigen::Vector2d::Zero());
  CHECK(zero_noise.q[0] == doctest::Approx(g.mean[0]).epsilon(1e-14));
  CHECK(zero_noise.qd[0] == doctest::Approx(g.mean[2]).epsilon(1e-14));
  CHECK(zero_noise.qd[1] == doctest::Approx(g.mean[3]).epsilon(1e-14));

  Rng rng(51);
  const int n_samples = 100000;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero(), sum2 = Eigen::Vector2d::Zero();
  for (int i = 0; i < n_samples; ++i) {
    const Eigen::Vector2d noise(rng.normal(), rng.normal());
    const JointState nx = sample_next_state(s, u, model, noise);
    sum += nx.qd;
    sum2 += nx.qd.cwiseProduct(nx.qd);
  }
  const Eigen::Vector2d mean = sum / n_samples;
  const Eigen::Vector2d var = sum2 / n_samples - mean.cwiseProduct(mean);
  for (int dof = 0; dof < 2; ++dof) {
    const double se = std::sqrt(g.cov(2 + dof, 2 + dof) / n_samples);
    CHECK(std::abs(mean[dof] - g.mean[2 + dof]) < 3.0 * se + 1e-12);
    CHECK(var[dof] == doctest::Approx(g.cov(2 + dof, 2 + dof)).epsilon(0.05));
  }
}

TEST_CASE("posterior variance is non-negative over many random queries") {
  const PlantParams p = default_params();
  const GpDataset ds = synthetic_dataset(60, 53, p, 0.02, [](const GpInput& x, int dof) {
    return 0.05 * std::sin(3.0 * x[0] + dof);
  });
  const GpModel model(ds, unit_hyp(1.0, 1e-8), p);
  Rng rng(59);
  for (int i = 0; i < 10000; ++i) {
    Eigen::Vector2d mean, var;
    model.posterior(random_input(rng), &mean, &var);
    CHECK(var.minCoeff() >= 0.0);
  }
  MESSAGE("variance clamps observed: ", model.variance_clamp_count());
}

TEST_CASE("adding a training point never increases posterior variance") {
  const PlantParams p = default_params();
  Rng rng(61);
  for (int trial = 0; trial < 5; ++trial) {
    GpDataset ds = synthetic_dataset(15, 70 + trial, p, 0.02,
                                     [](const GpInput& x, int) { return 0.1 * std::sin(x[0]); });
    const auto hyp = unit_hyp(1.0, 1e-4);
    const GpModel before(ds, hyp, p);
    GpDataset bigger = ds;
    const GpInput extra = random_input(rng);
    bigger.append(extra, prior_mean(extra, p, ds.ts));
    const GpModel after(bigger, hyp, p);
    for (int k = 0; k < 20; ++k) {
      const GpInput x = random_input(rng);
      Eigen::Vector2d m1, v1, m2, v2;
      before.posterior(x, &m1, &v1);
      after.posterior(x, &m2, &v2);
      CHECK(v2[0] <= v1[0] + 1e-10);
      CHECK(v2[1] <= v1[1] + 1e-10);
    }
  }
}

TEST_CASE("dataset CSV and hyperparameter JSON round trips") {
  const PlantParams p = default_params();
  const GpDataset ds = synthetic_dataset(17, 67, p, 0.02,
                                         [](const GpInput& x, int) { return 0.01 * x[0]; });
  namespace fs = std::filesystem;
  const std::string csv = (fs::temp_directory_path() / "pendlab_ds.csv").string();
  save_dataset_csv(ds, csv);
  const GpDataset back = load_dataset_csv(csv, ds.ts);
  CHECK(back.size() == ds.size());
  CHECK((back.inputs - ds.inputs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.targets - ds.targets).cwiseAbs().maxCoeff() == 0.0);
  fs::remove(csv);

  std::array<KernelHyp, 2> hyp = unit_hyp(0.77, 3e-6);
  hyp[1].lengthscales << 0.1, 0.2, 0.3, 0.4, 0.5;
  const std::string js = (fs::temp_directory_path() / "pendlab_hyp.json").string();
  save_hyp_json(hyp, js);
  const auto back_hyp = load_hyp_json(js);
  for (int dof = 0; dof < 2; ++dof) {
    CHECK((back_hyp[dof].lengthscales - hyp[dof].lengthscales).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back_hyp[dof].signal_var == hyp[dof].signal_var);
    CHECK(back_hyp[dof].noise_var == hyp[dof].noise_var);
  }
  fs::remove(js);
}

TEST_CASE("fused GP correction nodes match the batch query and finite differences") {
  const PlantParams p = default_params();
  const GpDataset ds = synthetic_dataset(25, 71, p, 0.02, [](const GpInput& x, int dof) {
    return 0.2 * std::sin(x[0] + x[4] * (dof + 1));
  });
  const GpModel model(ds, unit_hyp(0.9, 1e-5), p);
  Rng rng(73);
  for (int trial = 0; trial < 5; ++trial) {
    const GpInput x = random_input(rng, 2.0, 3.0, 2.0);
    Tape tape;
    std::array<Var, kGpInputDim> vars;
    for (int d = 0; d < kGpInputDim; ++d) vars[d] = tape.leaf(x[d]);
    const GpCorrectionVars cv = gp_correction_vars(tape, model, vars);

    Eigen::Vector2d mean, var;
    model.posterior(x, &mean, &var);
    const Eigen::Vector2d prior = prior_mean(x, p, model.ts());
    CHECK(cv.corr[0].value() == doctest::Approx(mean[0] - prior[0]).epsilon(1e-12));
    CHECK(cv.var[1].value() == doctest::Approx(var[1]).epsilon(1e-12));

    // finite-difference the correction and variance in each input direction
    for (int dof = 0; dof < 2; ++dof) {
      tape.backward(cv.corr[dof]);
      for (int d = 0; d < kGpInputDim; ++d) {
        const double h = 1e-6;
        GpInput xp = x, xm = x;
        xp[d] += h;
        xm[d] -= h;
        Eigen::Vector2d mp, vp, mm, vm;
        model.posterior(xp, &mp, &vp);
        model.posterior(xm, &mm, &vm);
        const Eigen::Vector2d prior_p = prior_mean(xp, p, model.ts());
        const Eigen::Vector2d prior_m = prior_mean(xm, p, model.ts());
        const double fd = ((mp[dof] - prior_p[dof]) - (mm[dof] - prior_m[dof])) / (2 * h);
        CHECK(tape.grad(vars[d]) == doctest::Approx(fd).epsilon(1e-4));
      }
      tape.backward(cv.var[dof]);
      for (int d = 0; d < kGpInputDim; ++d) {
        const double h = 1e-6;
        GpInput xp = x, xm = x;
        xp[d] += h;
        xm[d] -= h;
        Eigen::Vector2d mp, vp, mm, vm;
        model.posterior(xp, &mp, &vp);
        model.posterior(xm, &mm, &vm);
        const double fd = (vp[dof] - vm[dof]) / (2 * h);
        const double analytic = tape.grad(vars[d]);
        if (std::abs(analytic) > 1e-8)
          CHECK(std::abs(fd - analytic) / std::abs(analytic) < 1e-3);
        else
          CHECK(std::abs(fd - analytic) < 1e-7);
      }
    }
  }
}

TEST_CASE("jitter is reported when the factorization needs it") {
  const PlantParams p = default_params();
  GpDataset ds;
  ds.ts = 0.02;
  Rng rng(79);
  const GpInput x = random_input(rng);
  for (int i = 0; i < 30; ++i) ds.append(x, prior_mean(x, p, ds.ts));  // rank-1 Gram
  KernelHyp h;
  h.signal_var = 1.0;
  h.noise_var = 1e-8;
  const GpModel model(ds, {h, h}, p);
  CHECK(model.jitter(0) >= 0.0);  // built either directly or with jitter, no throw
}
