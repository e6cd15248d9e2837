#include "pendlab/control.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "pendlab/rng.hpp"

namespace pendlab {

std::string to_string(ControllerMode mode) {
  switch (mode) {
    case ControllerMode::kPolicy: return "POLICY";
    case ControllerMode::kDamping: return "DAMPING";
    case ControllerMode::kLqr: return "LQR";
  }
  return "?";
}

ControllerAssets make_controller_assets(const PlantParams& plant, PolicyParams policy) {
  ControllerAssets a;
  a.plant = plant;
  a.policy = std::move(policy);
  a.use_damping = plant.variant == RobotVariant::kPendubot;
  return a;
}

double damping_controller(const JointState& state, double d_gain, const PlantParams& params) {
  if (!(d_gain > 0)) throw std::invalid_argument("damping_controller: gain must be positive");
  const double u = -d_gain * state.qd[params.actuated_joint()];
  return std::clamp(u, -params.torque_limit, params.torque_limit);
}

Eigen::Vector4d goal_error(const JointState& state) {
  Eigen::Vector4d e;
  e << wrap_angle(state.q[0] - M_PI), wrap_angle(state.q[1]), state.qd[0], state.qd[1];
  return e;
}

bool in_roa(const JointState& state, const LqrStabilizer& lqr) {
  const Eigen::Vector4d e = goal_error(state);
  return e.dot(lqr.value * e) < lqr.rho;
}

ControlDecision controller_step(const JointState& state, ControllerMode mode,
                                const ControllerAssets& assets) {
  const double vmax = state.qd.cwiseAbs().maxCoeff();

  switch (mode) {
    case ControllerMode::kPolicy:
      if (assets.use_damping && vmax >= assets.damping.enter_velocity)
        mode = ControllerMode::kDamping;
      else if (assets.lqr && in_roa(state, *assets.lqr))
        mode = ControllerMode::kLqr;
      break;
    case ControllerMode::kDamping:
      if (vmax <= assets.damping.exit_velocity) mode = ControllerMode::kPolicy;
      break;
    case ControllerMode::kLqr: {
      const Eigen::Vector4d e = goal_error(state);
      if (e.dot(assets.lqr->value * e) > assets.lqr->rho_exit) mode = ControllerMode::kPolicy;
      break;
    }
  }

  const double um = assets.plant.torque_limit;
  double u = 0.0;
  switch (mode) {
    case ControllerMode::kPolicy:
      u = policy_eval(assets.policy, state);
      break;
    case ControllerMode::kDamping:
      u = damping_controller(state, assets.damping.gain, assets.plant);
      break;
    case ControllerMode::kLqr:
      u = -assets.lqr->gain.dot(goal_error(state));
      break;
  }
  return {std::clamp(u, -um, um), mode};
}

void linearize_at_goal(const PlantParams& params, Eigen::Matrix4d* a, Eigen::Vector4d* b_lin) {
  params.validate();
  const Eigen::Vector2d q_goal(M_PI, 0.0);
  const Eigen::Matrix2d m_inv = mass_matrix(q_goal, params).inverse();

  // gravity Jacobian at the upright point; Coriolis terms vanish at qd = 0
  const double c1 = std::cos(q_goal[0]);
  const double c12 = std::cos(q_goal[0] + q_goal[1]);
  const double g = params.g;
  Eigen::Matrix2d gq;
  gq(0, 0) = (params.m1 * params.r1 + params.m2 * params.l1) * g * c1 +
             params.m2 * params.r2 * g * c12;
  gq(0, 1) = params.m2 * params.r2 * g * c12;
  gq(1, 0) = params.m2 * params.r2 * g * c12;
  gq(1, 1) = params.m2 * params.r2 * g * c12;

  const Eigen::Matrix2d dn_dqd = Eigen::Vector2d(params.b1, params.b2).asDiagonal();

  a->setZero();
  a->topRightCorner<2, 2>().setIdentity();
  a->bottomLeftCorner<2, 2>() = -m_inv * gq;
  a->bottomRightCorner<2, 2>() = -m_inv * dn_dqd;

  Eigen::Vector2d b_col = Eigen::Vector2d::Zero();
  b_col[params.actuated_joint()] = 1.0;
  b_lin->setZero();
  b_lin->tail<2>() = m_inv * b_col;
}

namespace {

// The value matrix can be several orders of magnitude larger than A and Q for
// weakly controllable plants; the solve runs in extended precision so the
// double-precision residual stays at the evaluation-noise floor.
using MatX = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

// Solves A' X + X A = -W for symmetric X via the Kronecker system.
MatX solve_lyapunov(const MatX& a, const MatX& w) {
  const int n = static_cast<int>(a.rows());
  MatX big = MatX::Zero(n * n, n * n);
  const MatX id = MatX::Identity(n, n);
  // vec(A' X) = (I kron A') vec(X); vec(X A) = (A' kron I) vec(X)
  for (int i = 0; i < n; ++i) big.block(i * n, i * n, n, n) = a.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) big.block(i * n, j * n, n, n) += a(j, i) * id;
  Eigen::Matrix<long double, Eigen::Dynamic, 1> rhs(n * n);
  for (int c = 0; c < n; ++c) rhs.segment(c * n, n) = -w.col(c);
  const Eigen::Matrix<long double, Eigen::Dynamic, 1> x = big.fullPivLu().solve(rhs);
  MatX out(n, n);
  for (int c = 0; c < n; ++c) out.col(c) = x.segment(c * n, n);
  return 0.5 * (out + out.transpose());
}

}  // namespace

Eigen::MatrixXd solve_care(const Eigen::MatrixXd& a_in, const Eigen::MatrixXd& b_in,
                           const Eigen::MatrixXd& q_in, const Eigen::MatrixXd& r_in, double tol) {
  const int n = static_cast<int>(a_in.rows());
  const MatX a = a_in.cast<long double>();
  const MatX b = b_in.cast<long double>();
  const MatX q = q_in.cast<long double>();
  const MatX r_inv = r_in.cast<long double>().inverse();
  const MatX g = b * r_inv * b.transpose();

  // sign-function iteration on the Hamiltonian with determinant scaling
  MatX h(2 * n, 2 * n);
  h.topLeftCorner(n, n) = a;
  h.topRightCorner(n, n) = -g;
  h.bottomLeftCorner(n, n) = -q;
  h.bottomRightCorner(n, n) = -a.transpose();

  MatX z = h;
  for (int it = 0; it < 100; ++it) {
    const long double det = std::abs(static_cast<double>(z.determinant()));
    const long double c = det > 0 ? std::pow(static_cast<long double>(det),
                                             static_cast<long double>(-1.0 / (2.0 * n)))
                                  : 1.0L;
    const MatX zc = c * z;
    const MatX next = 0.5L * (zc + zc.inverse());
    const long double delta = (next - z).norm();
    z = next;
    if (delta < 1e-14L * std::max<long double>(1.0L, z.norm())) break;
  }

  // stable subspace satisfies (Z + I) [I; S] = 0
  MatX lhs(2 * n, n), rhs(2 * n, n);
  lhs.topRows(n) = z.topRightCorner(n, n);
  lhs.bottomRows(n) = z.bottomRightCorner(n, n) + MatX::Identity(n, n);
  rhs.topRows(n) = -(z.topLeftCorner(n, n) + MatX::Identity(n, n));
  rhs.bottomRows(n) = -z.bottomLeftCorner(n, n);
  MatX s = lhs.colPivHouseholderQr().solve(rhs);
  s = 0.5L * (s + s.transpose());

  // Newton refinement in increment form: A_cl' dS + dS A_cl = -residual(S).
  // The quadratic term is evaluated as (S B) R^-1 (B' S) so intermediates stay
  // at gain scale rather than ||S|| ||G||.
  const auto residual = [&](const MatX& x) -> MatX {
    const MatX xb = x * b;
    return a.transpose() * x + x * a - xb * r_inv * xb.transpose() + q;
  };
  long double res = residual(s).norm();
  for (int it = 0; it < 20 && res > 0.01L * static_cast<long double>(tol); ++it) {
    const MatX a_cl = a - g * s;
    const MatX ds = solve_lyapunov(a_cl, residual(s));
    const MatX next = 0.5L * ((s + ds) + (s + ds).transpose());
    const long double next_res = residual(next).norm();
    if (next_res >= res) break;  // at the precision floor
    s = next;
    res = next_res;
  }
  if (!(res <= static_cast<long double>(tol)) || !s.allFinite())
    throw std::runtime_error("solve_care: no convergence, residual norm " +
                             std::to_string(static_cast<double>(res)));
  return s.cast<double>();
}

LqrDesign lqr_gain(const Eigen::Matrix4d& a, const Eigen::Vector4d& b_lin,
                   const Eigen::Matrix4d& q, double r) {
  if (!(r > 0)) throw std::invalid_argument("lqr_gain: R must be positive");
  Eigen::MatrixXd rmat(1, 1);
  rmat(0, 0) = r;
  LqrDesign d;
  const Eigen::MatrixXd s = solve_care(a, b_lin, q, rmat, 1e-10);
  d.value = s;
  d.gain = (b_lin.transpose() * s) / r;
  const Eigen::Vector4d sb = s * b_lin;
  d.residual = (a.transpose() * s + s * a - sb * (1.0 / r) * sb.transpose() + q).norm();
  return d;
}

double calibrate_roa(const PlantParams& params, const LqrDesign& design, std::uint64_t seed,
                     int samples, double success_fraction, double rho_max, double sim_duration,
                     double sim_dt) {
  // uniform sampling inside {e : e'Se < rho} via the inverse square root of S
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(design.value);
  const Eigen::Matrix4d s_inv_sqrt =
      eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
      eig.eigenvectors().transpose();

  LqrStabilizer lqr;
  lqr.gain = design.gain;
  lqr.value = design.value;

  const int n_steps = static_cast<int>(sim_duration / sim_dt);
  for (double rho = rho_max; rho > 1e-8; rho *= 0.5) {
    int converged = 0;
    for (int i = 0; i < samples; ++i) {
      Rng rng(derive_seed(seed, 0x20A, static_cast<std::uint64_t>(i)));
      Eigen::Vector4d w;
      for (int d = 0; d < 4; ++d) w[d] = rng.normal();
      w.normalize();
      const double radius = std::pow(rng.uniform01(), 0.25);  // uniform in the 4-ball
      const Eigen::Vector4d e = std::sqrt(rho) * radius * (s_inv_sqrt * w);

      JointState state;
      state.q << M_PI + e[0], e[1];
      state.qd << e[2], e[3];
      bool ok = true;
      for (int k = 0; k < n_steps; ++k) {
        const double u = std::clamp(-lqr.gain.dot(goal_error(state)), -params.torque_limit,
                                    params.torque_limit);
        state = rk4_step(state, u, sim_dt, params);
        if (!state.finite() || state.qd.cwiseAbs().maxCoeff() > 1e3) {
          ok = false;
          break;
        }
      }
      if (ok) {
        const Eigen::Vector4d ef = goal_error(state);
        ok = ef.head<2>().cwiseAbs().maxCoeff() < 0.05 && ef.tail<2>().cwiseAbs().maxCoeff() < 0.1;
      }
      if (ok) ++converged;
    }
    if (converged >= static_cast<int>(std::ceil(success_fraction * samples))) return rho;
  }
  throw std::runtime_error("calibrate_roa: no admissible rho found");
}

void save_lqr_json(const LqrStabilizer& lqr, const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["K"] = std::vector<double>(lqr.gain.data(), lqr.gain.data() + 4);
  std::vector<double> s;
  for (int rr = 0; rr < 4; ++rr)
    for (int c = 0; c < 4; ++c) s.push_back(lqr.value(rr, c));
  j["S"] = s;
  j["rho"] = lqr.rho;
  j["rho_exit"] = lqr.rho_exit;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write LQR assets: " + path);
  f << j.dump(2) << "\n";
}

LqrStabilizer load_lqr_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read LQR assets: " + path);
  nlohmann::json j;
  f >> j;
  if (j.value("schema_version", 0) != 1)
    throw std::runtime_error("unsupported LQR schema in " + path);
  LqrStabilizer lqr;
  const auto k = j.at("K").get<std::vector<double>>();
  const auto s = j.at("S").get<std::vector<double>>();
  if (k.size() != 4 || s.size() != 16) throw std::runtime_error("malformed LQR file: " + path);
  for (int i = 0; i < 4; ++i) lqr.gain[i] = k[i];
  for (int rr = 0; rr < 4; ++rr)
    for (int c = 0; c < 4; ++c) lqr.value(rr, c) = s[rr * 4 + c];
  lqr.rho = j.at("rho").get<double>();
  lqr.rho_exit = j.at("rho_exit").get<double>();
  return lqr;
}

}  // namespace pendlab
