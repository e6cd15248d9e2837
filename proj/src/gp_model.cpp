#include "pendlab/gp_model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace pendlab {

void GpDataset::append(const GpInput& x, const Eigen::Vector2d& dv) {
  const int n = size();
  inputs.conservativeResize(n + 1, Eigen::NoChange);
  targets.conservativeResize(n + 1, Eigen::NoChange);
  inputs.row(n) = x.transpose();
  targets.row(n) = dv.transpose();
}

void GpDataset::append(const GpDataset& other) {
  if (other.size() == 0) return;
  if (size() > 0 && std::abs(other.ts - ts) > 1e-12)
    throw std::invalid_argument("GpDataset::append: sampling time mismatch");
  const int n = size();
  inputs.conservativeResize(n + other.size(), Eigen::NoChange);
  targets.conservativeResize(n + other.size(), Eigen::NoChange);
  inputs.bottomRows(other.size()) = other.inputs;
  targets.bottomRows(other.size()) = other.targets;
}

double se_kernel(const GpInput& a, const GpInput& b, const KernelHyp& hyp) {
  hyp.validate();
  const Eigen::Matrix<double, kGpInputDim, 1> d =
      (a - b).cwiseQuotient(hyp.lengthscales);
  return hyp.signal_var * std::exp(-0.5 * d.squaredNorm());
}

Eigen::Vector2d prior_mean(const GpInput& x, const PlantParams& params, double ts) {
  if (!(ts > 0)) throw std::invalid_argument("prior_mean: ts must be positive");
  JointState s;
  s.q << x[0], x[1];
  s.qd << x[2], x[3];
  return ts * forward_dynamics(s, x[4], params);
}

GpDataset subset_of_data(const GpDataset& dataset, int max_n) {
  if (max_n < 1) throw std::invalid_argument("subset_of_data: max_n must be >= 1");
  if (dataset.size() <= max_n) return dataset;
  GpDataset out;
  out.ts = dataset.ts;
  out.inputs = dataset.inputs.bottomRows(max_n);
  out.targets = dataset.targets.bottomRows(max_n);
  return out;
}

namespace {

Eigen::VectorXd residuals(const GpDataset& ds, const PlantParams& params, int dof) {
  Eigen::VectorXd r(ds.size());
  for (int i = 0; i < ds.size(); ++i) {
    const GpInput x = ds.inputs.row(i).transpose();
    r[i] = ds.targets(i, dof) - prior_mean(x, params, ds.ts)[dof];
  }
  return r;
}

// Gram matrix of the SE kernel without the noise term.
Eigen::MatrixXd gram(const Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor>& x,
                     const KernelHyp& hyp) {
  Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor> xs = x;
  for (int d = 0; d < kGpInputDim; ++d) xs.col(d) /= hyp.lengthscales[d];
  const Eigen::VectorXd n2 = xs.rowwise().squaredNorm();
  Eigen::MatrixXd s = -2.0 * (xs * xs.transpose());
  s.colwise() += n2;
  s.rowwise() += n2.transpose();
  return hyp.signal_var * (-0.5 * s.array()).cwiseMax(-700.0).exp().matrix();
}

struct NllEval {
  double nll = std::numeric_limits<double>::infinity();
  Eigen::Matrix<double, 7, 1> grad = Eigen::Matrix<double, 7, 1>::Zero();
  bool ok = false;
};

// theta = [log l_1..5, log sv, log noise]
NllEval eval_nll(const Eigen::Matrix<double, 7, 1>& theta,
                 const Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor>& x,
                 const std::array<Eigen::MatrixXd, kGpInputDim>& d2,
                 const Eigen::VectorXd& r) {
  NllEval out;
  const int m = static_cast<int>(x.rows());
  KernelHyp hyp;
  for (int d = 0; d < kGpInputDim; ++d) hyp.lengthscales[d] = std::exp(theta[d]);
  hyp.signal_var = std::exp(theta[5]);
  hyp.noise_var = std::exp(theta[6]);

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m, m);
  for (int d = 0; d < kGpInputDim; ++d)
    s += d2[d] / (hyp.lengthscales[d] * hyp.lengthscales[d]);
  const Eigen::MatrixXd k0 = hyp.signal_var * (-0.5 * s.array()).cwiseMax(-700.0).exp().matrix();
  Eigen::MatrixXd gamma = k0;
  gamma.diagonal().array() += hyp.noise_var;

  Eigen::LLT<Eigen::MatrixXd> llt(gamma);
  if (llt.info() != Eigen::Success) {
    gamma.diagonal().array() += 1e-8;
    llt.compute(gamma);
    if (llt.info() != Eigen::Success) return out;  // nll stays +inf
  }
  const Eigen::VectorXd alpha = llt.solve(r);
  double logdet = 0.0;
  for (int i = 0; i < m; ++i) logdet += std::log(llt.matrixL()(i, i));
  out.nll = 0.5 * r.dot(alpha) + logdet + 0.5 * m * std::log(2.0 * M_PI);

  // d nll / d theta_j = 0.5 tr((Gamma^-1 - alpha alpha^T) dGamma/dtheta_j)
  const Eigen::MatrixXd smat =
      llt.solve(Eigen::MatrixXd::Identity(m, m)) - alpha * alpha.transpose();
  for (int d = 0; d < kGpInputDim; ++d) {
    const double il2 = 1.0 / (hyp.lengthscales[d] * hyp.lengthscales[d]);
    out.grad[d] = 0.5 * (smat.array() * k0.array() * d2[d].array() * il2).sum();
  }
  out.grad[5] = 0.5 * (smat.array() * k0.array()).sum();
  out.grad[6] = 0.5 * hyp.noise_var * smat.trace();
  out.ok = out.grad.allFinite() && std::isfinite(out.nll);
  return out;
}

struct AdamRun {
  Eigen::Matrix<double, 7, 1> theta;
  double nll = std::numeric_limits<double>::infinity();
  bool converged = false;
};

AdamRun run_fit(Eigen::Matrix<double, 7, 1> theta,
                const Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor>& x,
                const std::array<Eigen::MatrixXd, kGpInputDim>& d2, const Eigen::VectorXd& r,
                const FitConfig& cfg) {
  const double log_noise_floor = std::log(cfg.noise_floor);
  auto project = [&](Eigen::Matrix<double, 7, 1>& t) {
    for (int d = 0; d < kGpInputDim; ++d) t[d] = std::clamp(t[d], std::log(1e-3), std::log(1e3));
    t[5] = std::clamp(t[5], std::log(1e-10), std::log(1e6));
    t[6] = std::clamp(t[6], log_noise_floor, std::log(1e3));
  };
  project(theta);

  Eigen::Matrix<double, 7, 1> m = Eigen::Matrix<double, 7, 1>::Zero();
  Eigen::Matrix<double, 7, 1> v = Eigen::Matrix<double, 7, 1>::Zero();
  AdamRun best;
  best.theta = theta;
  int stale = 0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const NllEval e = eval_nll(theta, x, d2, r);
    if (e.ok && e.nll < best.nll - std::abs(best.nll) * 1e-9 - 1e-12) {
      best.nll = e.nll;
      best.theta = theta;
      stale = 0;
    } else {
      ++stale;
    }
    if (!e.ok) break;
    if (e.grad.lpNorm<Eigen::Infinity>() < 1e-6 || stale > 40) {
      best.converged = true;
      break;
    }
    m = 0.9 * m + 0.1 * e.grad;
    v = 0.999 * v + 0.001 * e.grad.cwiseProduct(e.grad);
    const double bc1 = 1.0 - std::pow(0.9, it + 1);
    const double bc2 = 1.0 - std::pow(0.999, it + 1);
    for (int j = 0; j < 7; ++j)
      theta[j] -= cfg.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + 1e-8);
    project(theta);
  }
  if (!std::isfinite(best.nll)) {
    // gradient never produced a usable iterate; report the projected start
    best.theta = theta;
  }
  return best;
}

}  // namespace

FitResult fit_hyperparameters(const GpDataset& dataset, const PlantParams& params,
                              const FitConfig& config) {
  if (dataset.size() < 10)
    throw std::invalid_argument("fit_hyperparameters: need at least 10 data points");
  const GpDataset ds = subset_of_data(dataset, std::max(10, config.fit_subsample));
  const int m = ds.size();

  std::array<Eigen::MatrixXd, kGpInputDim> d2;
  for (int d = 0; d < kGpInputDim; ++d) {
    const Eigen::VectorXd col = ds.inputs.col(d);
    d2[d] = (col.replicate(1, m) - col.transpose().replicate(m, 1)).array().square();
  }

  FitResult result;
  for (int dof = 0; dof < 2; ++dof) {
    const Eigen::VectorXd r = residuals(ds, params, dof);
    const double rvar = std::max((r.array() - r.mean()).square().sum() / std::max(1, m - 1), 1e-6);

    Eigen::Matrix<double, 7, 1> init_unit;
    init_unit << 0, 0, 0, 0, 0, std::log(rvar), std::log(std::max(0.01 * rvar, config.noise_floor));

    Eigen::Matrix<double, 7, 1> init_scaled = init_unit;
    for (int d = 0; d < kGpInputDim; ++d) {
      const Eigen::VectorXd col = ds.inputs.col(d);
      const double sd = std::sqrt((col.array() - col.mean()).square().sum() / std::max(1, m - 1));
      init_scaled[d] = std::log(std::max(sd, 1e-2));
    }

    const AdamRun run_a = run_fit(init_unit, ds.inputs, d2, r, config);
    const AdamRun run_b = run_fit(init_scaled, ds.inputs, d2, r, config);
    const AdamRun& win = run_a.nll <= run_b.nll ? run_a : run_b;

    KernelHyp hyp;
    for (int d = 0; d < kGpInputDim; ++d) hyp.lengthscales[d] = std::exp(win.theta[d]);
    hyp.signal_var = std::exp(win.theta[5]);
    hyp.noise_var = std::max(std::exp(win.theta[6]), config.noise_floor);
    result.hyp[dof] = hyp;
    result.converged[dof] = win.converged;
    result.final_nll[dof] = win.nll;
  }
  return result;
}

GpModel::GpModel(GpDataset dataset, std::array<KernelHyp, 2> hyp, PlantParams plant)
    : dataset_(std::move(dataset)), hyp_(hyp), plant_(plant) {
  plant_.validate();
  const int m = dataset_.size();
  if (!(dataset_.ts > 0)) throw std::invalid_argument("GpModel: sampling time must be positive");
  for (int dof = 0; dof < 2; ++dof) {
    hyp_[dof].validate();
    x_scaled_[dof].resize(m, kGpInputDim);
    for (int d = 0; d < kGpInputDim; ++d)
      x_scaled_[dof].col(d) = dataset_.inputs.col(d) / hyp_[dof].lengthscales[d];
    x_norm2_[dof] = x_scaled_[dof].rowwise().squaredNorm();
    if (m == 0) {
      alpha_[dof].resize(0);
      gamma_inv_[dof].resize(0, 0);
      continue;
    }
    Eigen::MatrixXd gamma = gram(dataset_.inputs, hyp_[dof]);
    gamma.diagonal().array() += hyp_[dof].noise_var;
    Eigen::LLT<Eigen::MatrixXd> llt(gamma);
    double jit = 1e-10;
    while (llt.info() != Eigen::Success && jit <= 1e-6) {
      Eigen::MatrixXd g = gamma;
      g.diagonal().array() += jit;
      llt.compute(g);
      if (llt.info() == Eigen::Success) jitter_[dof] = jit;
      jit *= 10.0;
    }
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("GpModel: Cholesky failed even with jitter 1e-6");
    alpha_[dof] = llt.solve(residuals(dataset_, plant_, dof));
    gamma_inv_[dof] = llt.solve(Eigen::MatrixXd::Identity(m, m));
  }
}

void GpModel::query_block(
    const Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor>& queries,
    bool with_partials, GpBatchResult* out) const {
  const int b = static_cast<int>(queries.rows());
  const int m = dataset_.size();
  out->corr.resize(b, 2);
  out->var.resize(b, 2);
  for (int dof = 0; dof < 2; ++dof) {
    if (with_partials) {
      out->dcorr[dof].resize(b, kGpInputDim);
      out->dvar[dof].resize(b, kGpInputDim);
      out->dcorr[dof].setZero();
      out->dvar[dof].setZero();
    }
    const double sv = hyp_[dof].signal_var;
    if (m == 0) {
      out->corr.col(dof).setZero();
      out->var.col(dof).setConstant(sv);
      continue;
    }

    Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor> qs = queries;
    for (int d = 0; d < kGpInputDim; ++d) qs.col(d) /= hyp_[dof].lengthscales[d];
    const Eigen::VectorXd qn2 = qs.rowwise().squaredNorm();

    Eigen::MatrixXd dist = -2.0 * (qs * x_scaled_[dof].transpose());
    dist.colwise() += qn2;
    dist.rowwise() += x_norm2_[dof].transpose();
    const Eigen::MatrixXd k = sv * (-0.5 * dist.array()).cwiseMax(-700.0).exp().matrix();

    out->corr.col(dof) = k * alpha_[dof];
    const Eigen::MatrixXd t1 = k * gamma_inv_[dof];
    Eigen::VectorXd raw_var =
        Eigen::VectorXd::Constant(b, sv) - (k.array() * t1.array()).rowwise().sum().matrix();

    Eigen::Array<bool, Eigen::Dynamic, 1> clamped(b);
    for (int n = 0; n < b; ++n) {
      clamped[n] = raw_var[n] < 0.0;
      if (clamped[n]) {
        raw_var[n] = 0.0;
        var_clamps_.fetch_add(1, std::memory_order_relaxed);
      }
    }
    out->var.col(dof) = raw_var;

    if (with_partials) {
      const Eigen::MatrixXd w = k.array().rowwise() * alpha_[dof].transpose().array();
      const Eigen::MatrixXd pm = w * x_scaled_[dof];
      const Eigen::VectorXd wsum = w.rowwise().sum();
      const Eigen::MatrixXd vmat = k.array() * t1.array();
      const Eigen::MatrixXd pv = vmat * x_scaled_[dof];
      const Eigen::VectorXd vsum = vmat.rowwise().sum();
      for (int d = 0; d < kGpInputDim; ++d) {
        const double il = 1.0 / hyp_[dof].lengthscales[d];
        out->dcorr[dof].col(d) = (pm.col(d) - qs.col(d).cwiseProduct(wsum)) * il;
        out->dvar[dof].col(d) = -2.0 * (pv.col(d) - qs.col(d).cwiseProduct(vsum)) * il;
      }
      for (int n = 0; n < b; ++n)
        if (clamped[n]) out->dvar[dof].row(n).setZero();
    }
  }
}

void GpModel::posterior(const GpInput& x, Eigen::Vector2d* mean, Eigen::Vector2d* var) const {
  Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor> q(1, kGpInputDim);
  q.row(0) = x.transpose();
  GpBatchResult res;
  query_block(q, false, &res);
  const Eigen::Vector2d prior = prior_mean(x, plant_, dataset_.ts);
  *mean = prior + res.corr.row(0).transpose();
  *var = res.var.row(0).transpose();
}

GaussianState one_step_predict(const JointState& state, double u, const GpModel& model) {
  Eigen::Vector2d mean_delta, var_delta;
  model.posterior(make_gp_input(state, u), &mean_delta, &var_delta);
  const double ts = model.ts();
  GaussianState out;
  out.mean.head<2>() = state.q + ts * state.qd + 0.5 * ts * mean_delta;
  out.mean.tail<2>() = state.qd + mean_delta;
  out.cov.setZero();
  for (int i = 0; i < 2; ++i) {
    const double v = var_delta[i];
    out.cov(i, i) = 0.25 * ts * ts * v;
    out.cov(i, 2 + i) = 0.5 * ts * v;
    out.cov(2 + i, i) = 0.5 * ts * v;
    out.cov(2 + i, 2 + i) = v;
  }
  return out;
}

JointState sample_next_state(const JointState& state, double u, const GpModel& model,
                             const Eigen::Vector2d& noise) {
  Eigen::Vector2d mean_delta, var_delta;
  model.posterior(make_gp_input(state, u), &mean_delta, &var_delta);
  const Eigen::Vector2d delta = mean_delta + var_delta.cwiseSqrt().cwiseProduct(noise);
  const double ts = model.ts();
  JointState out;
  out.qd = state.qd + delta;
  out.q = state.q + ts * state.qd + 0.5 * ts * delta;
  return out;
}

GpCorrectionVars gp_correction_vars(Tape& tape, const GpModel& model,
                                    const std::array<Var, kGpInputDim>& x) {
  Eigen::Matrix<double, Eigen::Dynamic, kGpInputDim, Eigen::RowMajor> q(1, kGpInputDim);
  for (int d = 0; d < kGpInputDim; ++d) q(0, d) = x[d].value();
  GpBatchResult res;
  model.query_block(q, true, &res);

  std::array<std::int32_t, kGpInputDim> idx;
  for (int d = 0; d < kGpInputDim; ++d) idx[d] = x[d].idx;

  GpCorrectionVars out;
  std::array<double, kGpInputDim> par;
  for (int dof = 0; dof < 2; ++dof) {
    for (int d = 0; d < kGpInputDim; ++d) par[d] = res.dcorr[dof](0, d);
    out.corr[dof] = tape.push_fused(res.corr(0, dof), idx, par, "gp_correction");
    for (int d = 0; d < kGpInputDim; ++d) par[d] = res.dvar[dof](0, d);
    out.var[dof] = tape.push_fused(res.var(0, dof), idx, par, "gp_variance");
  }
  return out;
}

void save_dataset_csv(const GpDataset& dataset, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write dataset: " + path);
  f << "q1,q2,qd1,qd2,u,dv1,dv2\n";
  char buf[420];
  for (int i = 0; i < dataset.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  dataset.inputs(i, 0), dataset.inputs(i, 1), dataset.inputs(i, 2),
                  dataset.inputs(i, 3), dataset.inputs(i, 4), dataset.targets(i, 0),
                  dataset.targets(i, 1));
    f << buf;
  }
}

GpDataset load_dataset_csv(const std::string& path, double ts) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read dataset: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "q1,q2,qd1,qd2,u,dv1,dv2")
    throw std::runtime_error("bad dataset header in " + path);
  std::vector<std::array<double, 7>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::array<double, 7> row{};
    std::stringstream ss(line);
    std::string cell;
    for (int c = 0; c < 7; ++c) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error("short dataset row in " + path);
      row[c] = std::stod(cell);
    }
    rows.push_back(row);
  }
  GpDataset ds;
  ds.ts = ts;
  ds.inputs.resize(rows.size(), kGpInputDim);
  ds.targets.resize(rows.size(), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int d = 0; d < kGpInputDim; ++d) ds.inputs(i, d) = rows[i][d];
    ds.targets(i, 0) = rows[i][5];
    ds.targets(i, 1) = rows[i][6];
  }
  return ds;
}

void save_hyp_json(const std::array<KernelHyp, 2>& hyp, const std::string& path) {
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
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write hyperparameters: " + path);
  f << j.dump(2) << "\n";
}

std::array<KernelHyp, 2> load_hyp_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read hyperparameters: " + path);
  nlohmann::json j;
  f >> j;
  if (j.value("schema_version", 0) != 1)
    throw std::runtime_error("unsupported hyperparameter schema in " + path);
  std::array<KernelHyp, 2> hyp;
  for (int dof = 0; dof < 2; ++dof) {
    const auto& h = j.at("dofs").at(dof);
    const auto ls = h.at("lengthscales").get<std::vector<double>>();
    if (ls.size() != kGpInputDim) throw std::runtime_error("bad lengthscale count in " + path);
    for (int d = 0; d < kGpInputDim; ++d) hyp[dof].lengthscales[d] = ls[d];
    hyp[dof].signal_var = h.at("signal_var").get<double>();
    hyp[dof].noise_var = h.at("noise_var").get<double>();
    hyp[dof].validate();
  }
  return hyp;
}

}  // namespace pendlab
