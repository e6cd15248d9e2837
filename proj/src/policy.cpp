#include "pendlab/policy.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace pendlab {

Eigen::Matrix<double, kFeatureDim, 1> feature_map(const JointState& state) {
  Eigen::Matrix<double, kFeatureDim, 1> phi;
  phi << state.qd[0], state.qd[1], std::cos(state.q[0]), std::cos(state.q[1]),
      std::sin(state.q[0]), std::sin(state.q[1]);
  return phi;
}

namespace {

// Shared forward pass, batched over the basis functions. When `scratch` is
// given, the exponentials and distance products are kept for the partial
// computation in policy_eval_var.
struct EvalScratch {
  Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor> diff;  // a_i - phi
  Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor> z;     // L (a_i - phi)
  Eigen::VectorXd e;                                                         // exp(-|z|^2)
};

double eval_core(const Eigen::VectorXd& w,
                 const Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor>& a,
                 const Eigen::Matrix<double, kFeatureDim, kFeatureDim>& l, double u_max,
                 const Eigen::Matrix<double, kFeatureDim, 1>& phi, EvalScratch* scratch) {
  EvalScratch local;
  EvalScratch& sc = scratch ? *scratch : local;
  sc.diff = a;
  sc.diff.rowwise() -= phi.transpose();
  sc.z.noalias() = sc.diff * l.transpose();
  sc.e = (-sc.z.rowwise().squaredNorm()).array().exp();
  const double s = w.dot(sc.e) / u_max;
  return u_max * std::tanh(s);
}

}  // namespace

double policy_eval(const PolicyParams& params, const JointState& state) {
  return eval_core(params.weights, params.centers, params.l_factor, params.u_max,
                   feature_map(state), nullptr);
}

PolicyParams init_policy(std::uint64_t seed, const PolicyConfig& config) {
  if (config.n_basis < 1) throw std::invalid_argument("init_policy: n_basis must be >= 1");
  Rng rng(derive_seed(seed, 0x70 /*policy*/));
  PolicyParams p;
  p.u_max = config.u_max;
  p.weights.resize(config.n_basis);
  p.centers.resize(config.n_basis, kFeatureDim);
  for (int i = 0; i < config.n_basis; ++i)
    p.weights[i] = rng.uniform(-config.u_max, config.u_max);
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < config.n_basis; ++i) {
    p.centers(i, 0) = rng.uniform(-config.velocity_range, config.velocity_range);
    p.centers(i, 1) = rng.uniform(-config.velocity_range, config.velocity_range);
    const double a1 = rng.uniform(-pi, pi);
    const double a2 = rng.uniform(-pi, pi);
    p.centers(i, 2) = std::cos(a1);
    p.centers(i, 3) = std::cos(a2);
    p.centers(i, 4) = std::sin(a1);
    p.centers(i, 5) = std::sin(a2);
  }
  p.l_factor.setIdentity();
  return p;
}

Eigen::VectorXd dropout_mask(int n, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  Eigen::VectorXd mask(n);
  if (rate == 0.0) {
    mask.setOnes();
    return mask;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  for (int i = 0; i < n; ++i) mask[i] = rng.uniform01() < rate ? 0.0 : keep_scale;
  return mask;
}

PolicyParams apply_dropout(const PolicyParams& params, double rate, Rng& rng) {
  PolicyParams out = params;
  out.weights = params.weights.cwiseProduct(dropout_mask(params.n_basis(), rate, rng));
  return out;
}

Eigen::VectorXd flatten_params(const PolicyParams& params) {
  const int nb = params.n_basis();
  Eigen::VectorXd flat(params.n_params());
  flat.head(nb) = params.weights;
  for (int i = 0; i < nb; ++i)
    flat.segment(nb + i * kFeatureDim, kFeatureDim) = params.centers.row(i).transpose();
  for (int r = 0; r < kFeatureDim; ++r)
    for (int c = 0; c < kFeatureDim; ++c)
      flat[nb * (1 + kFeatureDim) + r * kFeatureDim + c] = params.l_factor(r, c);
  return flat;
}

PolicyParams unflatten_params(const Eigen::VectorXd& flat, int n_basis, double u_max) {
  PolicyParams p;
  p.u_max = u_max;
  if (flat.size() != n_basis * (1 + kFeatureDim) + kFeatureDim * kFeatureDim)
    throw std::invalid_argument("unflatten_params: size mismatch");
  p.weights = flat.head(n_basis);
  p.centers.resize(n_basis, kFeatureDim);
  for (int i = 0; i < n_basis; ++i)
    p.centers.row(i) = flat.segment(n_basis + i * kFeatureDim, kFeatureDim).transpose();
  for (int r = 0; r < kFeatureDim; ++r)
    for (int c = 0; c < kFeatureDim; ++c)
      p.l_factor(r, c) = flat[n_basis * (1 + kFeatureDim) + r * kFeatureDim + c];
  return p;
}

void save_policy_json(const PolicyParams& params, const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["n_basis"] = params.n_basis();
  j["u_max"] = params.u_max;
  j["w"] = std::vector<double>(params.weights.data(), params.weights.data() + params.n_basis());
  std::vector<double> a;
  a.reserve(params.n_basis() * kFeatureDim);
  for (int i = 0; i < params.n_basis(); ++i)
    for (int c = 0; c < kFeatureDim; ++c) a.push_back(params.centers(i, c));
  j["A"] = a;
  std::vector<double> l;
  for (int r = 0; r < kFeatureDim; ++r)
    for (int c = 0; c < kFeatureDim; ++c) l.push_back(params.l_factor(r, c));
  j["L"] = l;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write policy checkpoint: " + path);
  f << j.dump(2) << "\n";
}

PolicyParams load_policy_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read policy checkpoint: " + path);
  nlohmann::json j;
  f >> j;
  if (j.value("schema_version", 0) != 1)
    throw std::runtime_error("unsupported policy checkpoint schema in " + path);
  const int nb = j.at("n_basis").get<int>();
  PolicyParams p;
  p.u_max = j.at("u_max").get<double>();
  const auto w = j.at("w").get<std::vector<double>>();
  const auto a = j.at("A").get<std::vector<double>>();
  const auto l = j.at("L").get<std::vector<double>>();
  if (static_cast<int>(w.size()) != nb || static_cast<int>(a.size()) != nb * kFeatureDim ||
      l.size() != kFeatureDim * kFeatureDim)
    throw std::runtime_error("malformed policy checkpoint: " + path);
  p.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), nb);
  p.centers.resize(nb, kFeatureDim);
  for (int i = 0; i < nb; ++i)
    for (int c = 0; c < kFeatureDim; ++c) p.centers(i, c) = a[i * kFeatureDim + c];
  for (int r = 0; r < kFeatureDim; ++r)
    for (int c = 0; c < kFeatureDim; ++c) p.l_factor(r, c) = l[r * kFeatureDim + c];
  return p;
}

Var policy_eval_var(Tape& tape, double u_max, const PolicyVars& vars,
                    Var q1, Var q2, Var qd1, Var qd2) {
  const int nb = static_cast<int>(vars.weights.size());

  Eigen::VectorXd w(nb);
  Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor> a(nb, kFeatureDim);
  Eigen::Matrix<double, kFeatureDim, kFeatureDim> l;
  for (int i = 0; i < nb; ++i) w[i] = vars.weights[i].value();
  for (int i = 0; i < nb; ++i)
    for (int c = 0; c < kFeatureDim; ++c) a(i, c) = vars.centers[i * kFeatureDim + c].value();
  for (int r = 0; r < kFeatureDim; ++r)
    for (int c = 0; c < kFeatureDim; ++c) l(r, c) = vars.l_factor[r * kFeatureDim + c].value();

  JointState st;
  st.q << q1.value(), q2.value();
  st.qd << qd1.value(), qd2.value();
  const Eigen::Matrix<double, kFeatureDim, 1> phi = feature_map(st);

  EvalScratch sc;
  const double u = eval_core(w, a, l, u_max, phi, &sc);

  // d u / d s through the tanh squashing
  const double s_gain = u_max * (1.0 - (u / u_max) * (u / u_max));

  const int n_inputs = 4 + nb * (1 + kFeatureDim) + kFeatureDim * kFeatureDim;
  std::vector<std::int32_t> idx(n_inputs);
  std::vector<double> par(n_inputs);

  // per-basis chain factor g_i = s_gain * (w_i/u_max) e_i; then
  // du/da_i = -2 g_i L' z_i, du/dphi = -sum du/da_i, du/dL = -2 sum g_i z_i d_i'
  const Eigen::VectorXd g = (s_gain / u_max) * w.cwiseProduct(sc.e);
  Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor> da(nb, kFeatureDim);
  da.noalias() = sc.z * l;
  da.array().colwise() *= -2.0 * g.array();
  const Eigen::Matrix<double, kFeatureDim, 1> dphi = -da.colwise().sum().transpose();
  Eigen::Matrix<double, kFeatureDim, kFeatureDim> dl;
  dl.noalias() = -2.0 * sc.z.transpose() * (sc.diff.array().colwise() * g.array()).matrix();

  int k = 4;  // slots 0..3 reserved for the state
  for (int i = 0; i < nb; ++i) {
    idx[k] = vars.weights[i].idx;
    par[k] = s_gain * sc.e[i] / u_max;
    ++k;
  }
  for (int i = 0; i < nb; ++i)
    for (int c = 0; c < kFeatureDim; ++c) {
      idx[k] = vars.centers[i * kFeatureDim + c].idx;
      par[k] = da(i, c);
      ++k;
    }
  for (int r = 0; r < kFeatureDim; ++r)
    for (int c = 0; c < kFeatureDim; ++c) {
      idx[k] = vars.l_factor[r * kFeatureDim + c].idx;
      par[k] = dl(r, c);
      ++k;
    }

  const double s1 = std::sin(st.q[0]), c1 = std::cos(st.q[0]);
  const double s2 = std::sin(st.q[1]), c2 = std::cos(st.q[1]);
  idx[0] = q1.idx;
  par[0] = dphi[2] * (-s1) + dphi[4] * c1;
  idx[1] = q2.idx;
  par[1] = dphi[3] * (-s2) + dphi[5] * c2;
  idx[2] = qd1.idx;
  par[2] = dphi[0];
  idx[3] = qd2.idx;
  par[3] = dphi[1];

  return tape.push_fused(u, idx, par, "policy_eval");
}

}  // namespace pendlab
