#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "pendlab/policy.hpp"
#include "pendlab/rng.hpp"
#include "support/oracles.hpp"

using namespace pendlab;

namespace {

JointState make_state(double q1, double q2, double qd1, double qd2) {
  JointState s;
  s.q << q1, q2;
  s.qd << qd1, qd2;
  return s;
}

PolicyParams small_policy(std::uint64_t seed, int n_basis = 12) {
  PolicyConfig cfg;
  cfg.n_basis = n_basis;
  return init_policy(seed, cfg);
}

}  // namespace

TEST_CASE("feature map ordering and reference points") {
  const auto phi0 = feature_map(make_state(0, 0, 0, 0));
  CHECK(phi0[0] == 0.0);
  CHECK(phi0[1] == 0.0);
  CHECK(phi0[2] == 1.0);
  CHECK(phi0[3] == 1.0);
  CHECK(phi0[4] == 0.0);
  CHECK(phi0[5] == 0.0);

  const auto phi_up = feature_map(make_state(M_PI, 0, 0, 0));
  CHECK(phi_up[2] == doctest::Approx(-1.0));
  CHECK(phi_up[3] == doctest::Approx(1.0));

  const auto phi_v = feature_map(make_state(0.3, -0.7, 1.5, -2.5));
  CHECK(phi_v[0] == 1.5);
  CHECK(phi_v[1] == -2.5);
}

TEST_CASE("policy is 2 pi periodic in each joint angle") {
  const PolicyParams p = small_policy(100);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const JointState s = make_state(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-5, 5),
                                    rng.uniform(-5, 5));
    JointState shifted = s;
    shifted.q[0] += 2.0 * M_PI;
    shifted.q[1] -= 4.0 * M_PI;
    CHECK(policy_eval(p, s) == doctest::Approx(policy_eval(p, shifted)).epsilon(1e-12));
  }
}

TEST_CASE("zero weights give zero torque everywhere") {
  PolicyParams p = small_policy(7);
  p.weights.setZero();
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const JointState s = make_state(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-9, 9),
                                    rng.uniform(-9, 9));
    CHECK(policy_eval(p, s) == 0.0);
  }
}

TEST_CASE("policy output is strictly inside the torque bound") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    PolicyParams p = small_policy(200 + trial, 30);
    p.weights *= rng.uniform(1.0, 50.0);  // exaggerate weights; tanh still bounds
    for (int i = 0; i < 500; ++i) {
      const JointState s = make_state(rng.uniform(-6, 6), rng.uniform(-6, 6),
                                      rng.uniform(-30, 30), rng.uniform(-30, 30));
      CHECK(std::abs(policy_eval(p, s)) < p.u_max);
    }
  }
}

TEST_CASE("initialization follows the documented distributions") {
  PolicyConfig cfg;
  cfg.n_basis = 500;
  const PolicyParams p = init_policy(1234, cfg);
  CHECK(p.n_basis() == 500);
  for (int i = 0; i < p.n_basis(); ++i) {
    CHECK(std::abs(p.weights[i]) <= cfg.u_max);
    CHECK(std::abs(p.centers(i, 0)) <= cfg.velocity_range);
    CHECK(std::abs(p.centers(i, 1)) <= cfg.velocity_range);
    const double c1 = p.centers(i, 2), c2 = p.centers(i, 3);
    const double s1 = p.centers(i, 4), s2 = p.centers(i, 5);
    CHECK(std::abs(c1 * c1 + s1 * s1 - 1.0) < 1e-12);
    CHECK(std::abs(c2 * c2 + s2 * s2 - 1.0) < 1e-12);
  }
  CHECK((p.l_factor - Eigen::Matrix<double, 6, 6>::Identity()).cwiseAbs().maxCoeff() == 0.0);

  const PolicyParams q = init_policy(1234, cfg);
  CHECK((p.weights - q.weights).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.centers - q.centers).cwiseAbs().maxCoeff() == 0.0);

  const PolicyParams r = init_policy(1235, cfg);
  CHECK((p.weights - r.weights).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("dropout: identity at rate zero, unbiased in expectation, half-sparse at 0.5") {
  const PolicyParams p = small_policy(55, 40);

  Rng rng0(77);
  const PolicyParams same = apply_dropout(p, 0.0, rng0);
  CHECK((same.weights - p.weights).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(78);
  Eigen::VectorXd mean_w = Eigen::VectorXd::Zero(p.n_basis());
  int zeros = 0;
  const int n_masks = 100000;
  for (int i = 0; i < n_masks; ++i) {
    const Eigen::VectorXd mask = dropout_mask(p.n_basis(), 0.5, rng);
    mean_w += p.weights.cwiseProduct(mask);
    for (int j = 0; j < p.n_basis(); ++j)
      if (mask[j] == 0.0) ++zeros;
  }
  mean_w /= n_masks;
  for (int j = 0; j < p.n_basis(); ++j) {
    if (std::abs(p.weights[j]) > 0.1)
      CHECK(mean_w[j] == doctest::Approx(p.weights[j]).epsilon(0.01));
  }
  const double zero_frac = static_cast<double>(zeros) / (static_cast<double>(n_masks) * p.n_basis());
  CHECK(zero_frac == doctest::Approx(0.5).epsilon(0.01));

  CHECK_THROWS_AS(dropout_mask(10, 1.0, rng), std::invalid_argument);
}

TEST_CASE("fused policy gradient matches central finite differences") {
  const PolicyParams p = small_policy(321, 15);
  const Eigen::VectorXd flat = flatten_params(p);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const JointState s = make_state(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-4, 4),
                                    rng.uniform(-4, 4));
    // gradient w.r.t. all parameters via one fused node
    Tape tape;
    std::vector<Var> leaves;
    for (int i = 0; i < flat.size(); ++i) leaves.push_back(tape.leaf(flat[i]));
    const int nb = p.n_basis();
    PolicyVars pv{std::span<const Var>(leaves.data(), nb),
                  std::span<const Var>(leaves.data() + nb, nb * kFeatureDim),
                  std::span<const Var>(leaves.data() + nb * (1 + kFeatureDim), 36)};
    const Var q1 = tape.leaf(s.q[0]), q2 = tape.leaf(s.q[1]);
    const Var qd1 = tape.leaf(s.qd[0]), qd2 = tape.leaf(s.qd[1]);
    const Var u = policy_eval_var(tape, p.u_max, pv, q1, q2, qd1, qd2);
    CHECK(u.value() == doctest::Approx(policy_eval(p, s)).epsilon(1e-15));
    tape.backward(u);

    const auto f = [&](const Eigen::VectorXd& x) {
      return policy_eval(unflatten_params(x, nb, p.u_max), s);
    };
    const Eigen::VectorXd fd = oracle::central_diff(f, flat, 1e-6);
    for (int i = 0; i < flat.size(); ++i) {
      const double analytic = tape.grad(leaves[i]);
      if (std::abs(analytic) > 1e-6)
        CHECK(std::abs(fd[i] - analytic) / std::abs(analytic) < 1e-4);
      else
        CHECK(std::abs(fd[i] - analytic) < 1e-6);
    }
    // state gradient
    const double h = 1e-6;
    JointState sp = s, sm = s;
    sp.q[0] += h;
    sm.q[0] -= h;
    const double dq1 = (policy_eval(p, sp) - policy_eval(p, sm)) / (2 * h);
    CHECK(tape.grad(q1) == doctest::Approx(dq1).epsilon(1e-5));
  }
}

TEST_CASE("flatten/unflatten round trip") {
  const PolicyParams p = small_policy(999, 9);
  const PolicyParams q = unflatten_params(flatten_params(p), 9, p.u_max);
  CHECK((p.weights - q.weights).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.centers - q.centers).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.l_factor - q.l_factor).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint JSON round trip is exact") {
  const PolicyParams p = small_policy(31337, 17);
  const std::string path = (std::filesystem::temp_directory_path() / "pendlab_policy.json").string();
  save_policy_json(p, path);
  const PolicyParams q = load_policy_json(path);
  CHECK(q.n_basis() == 17);
  CHECK(q.u_max == p.u_max);
  CHECK((p.weights - q.weights).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.centers - q.centers).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.l_factor - q.l_factor).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}
