#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "msknet/common.hpp"
#include "msknet/dynamics.hpp"
#include "msknet/muscle.hpp"
#include "msknet/so_solver.hpp"
#include "oracles.hpp"

using namespace msknet;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

using oracles::BruteResult;
using oracles::brute_force_so;

}  // namespace

TEST_CASE("single muscle single joint solves in closed form") {
  MatrixXd a_mat(1, 1);
  a_mat << 2.0;

  SECTION("interior") {
    SoResult r = so_solve_frame(a_mat, VectorXd::Constant(1, 1.0));
    REQUIRE(r.feasible);
    REQUIRE(r.activations(0) == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(r.objective == Catch::Approx(0.25).margin(1e-12));
    REQUIRE(r.kkt_residual <= 1e-10);
  }
  SECTION("demand above the achievable range is flagged") {
    SoResult r = so_solve_frame(a_mat, VectorXd::Constant(1, 4.0));
    REQUIRE_FALSE(r.feasible);
    REQUIRE(r.activations(0) == Catch::Approx(1.0).margin(1e-8));
    REQUIRE(r.equality_residual == Catch::Approx(2.0).margin(1e-7));
  }
  SECTION("demand below the activation floor is flagged") {
    SoResult r = so_solve_frame(a_mat, VectorXd::Constant(1, 0.004));
    REQUIRE_FALSE(r.feasible);
    REQUIRE(r.activations(0) == Catch::Approx(0.01).margin(1e-8));
    REQUIRE(r.equality_residual == Catch::Approx(0.016).margin(1e-7));
  }
}

TEST_CASE("identical parallel muscles share the load evenly") {
  MatrixXd a_mat(1, 2);
  a_mat << 1.0, 1.0;
  SoResult r = so_solve_frame(a_mat, VectorXd::Constant(1, 0.8));
  REQUIRE(r.feasible);
  REQUIRE(r.activations(0) == Catch::Approx(0.4).margin(1e-10));
  REQUIRE(r.activations(1) == Catch::Approx(0.4).margin(1e-10));
  REQUIRE(r.kkt_residual <= 1e-10);
}

TEST_CASE("balanced antagonists at zero demand rest on the lower bound") {
  MatrixXd a_mat(2, 2);
  a_mat << 1.3, -1.3, 0.7, -0.7;
  SoResult r = so_solve_frame(a_mat, VectorXd::Zero(2));
  REQUIRE(r.feasible);
  REQUIRE(r.activations(0) == Catch::Approx(0.01).margin(1e-12));
  REQUIRE(r.activations(1) == Catch::Approx(0.01).margin(1e-12));
  REQUIRE(r.kkt_residual <= 1e-10);
}

TEST_CASE("random feasible instances match the brute-force oracle") {
  Rng rng(derive_seed(20260825, 0x50f3));
  int solved = 0;
  for (int trial = 0; trial < 200; ++trial) {
    int k = 1 + static_cast<int>(rng.next_u64() % 2);
    int m = k + static_cast<int>(rng.next_u64() % static_cast<unsigned>(5 - k));
    MatrixXd a_mat(k, m);
    VectorXd a_star(m);
    while (true) {
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < m; ++j) a_mat(i, j) = rng.uniform(-1.0, 1.0);
      Eigen::ColPivHouseholderQR<MatrixXd> qr(a_mat);
      qr.setThreshold(1e-6);
      if (static_cast<int>(qr.rank()) == k) break;
    }
    for (int j = 0; j < m; ++j) a_star(j) = rng.uniform(0.15, 0.85);
    VectorXd b = a_mat * a_star;

    SoResult r = so_solve_frame(a_mat, b);
    REQUIRE(r.feasible);
    REQUIRE(r.kkt_residual <= 1e-8);
    REQUIRE(r.equality_residual <= 1e-8);
    REQUIRE(r.activations.minCoeff() >= 0.01 - 1e-12);
    REQUIRE(r.activations.maxCoeff() <= 1.0 + 1e-12);

    BruteResult oracle = brute_force_so(a_mat, b, 0.01, 1.0);
    REQUIRE(oracle.found);
    REQUIRE(std::abs(r.objective - oracle.objective) <= 1e-6);
    ++solved;
  }
  REQUIRE(solved == 200);
}

TEST_CASE("redundant systems beyond the oracle range still satisfy KKT") {
  Rng rng(derive_seed(20260825, 0xb16));
  for (int trial = 0; trial < 50; ++trial) {
    int k = 3, m = 10;
    MatrixXd a_mat(k, m);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < m; ++j) a_mat(i, j) = rng.uniform(-1.0, 1.0);
    VectorXd a_star(m);
    for (int j = 0; j < m; ++j) a_star(j) = rng.uniform(0.15, 0.85);
    SoResult r = so_solve_frame(a_mat, a_mat * a_star);
    REQUIRE(r.feasible);
    REQUIRE(r.kkt_residual <= 1e-8);
    REQUIRE(r.objective <= a_star.squaredNorm() + 1e-9);  // generator is feasible
  }
}

TEST_CASE("infeasible demands produce flagged lexicographic solutions") {
  SECTION("uniform overload saturates every muscle") {
    MatrixXd a_mat(1, 2);
    a_mat << 1.0, 1.0;
    SoResult r = so_solve_frame(a_mat, VectorXd::Constant(1, 5.0));
    REQUIRE_FALSE(r.feasible);
    REQUIRE(r.activations(0) == Catch::Approx(1.0).margin(1e-7));
    REQUIRE(r.activations(1) == Catch::Approx(1.0).margin(1e-7));
    REQUIRE(r.equality_residual == Catch::Approx(3.0).margin(1e-6));
  }
  SECTION("antagonist overload drives the opposing muscle to the floor") {
    MatrixXd a_mat(1, 2);
    a_mat << 1.0, -1.0;
    SoResult r = so_solve_frame(a_mat, VectorXd::Constant(1, 3.0));
    REQUIRE_FALSE(r.feasible);
    REQUIRE(r.activations(0) == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(r.activations(1) == Catch::Approx(0.01).margin(1e-6));
    REQUIRE(r.equality_residual == Catch::Approx(2.01).margin(1e-6));
  }
  SECTION("a joint no muscle spans cannot absorb demand") {
    MatrixXd a_mat(2, 2);
    a_mat << 1.0, 1.0, 0.0, 0.0;
    VectorXd b(2);
    b << 1.0, 0.5;
    SoResult r = so_solve_frame(a_mat, b);
    REQUIRE_FALSE(r.feasible);
    REQUIRE(r.equality_residual == Catch::Approx(0.5).margin(1e-6));
    REQUIRE(r.activations.sum() == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("repeated solves are bitwise deterministic") {
  Rng rng(derive_seed(7, 0xde7));
  MatrixXd a_mat(2, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) a_mat(i, j) = rng.uniform(-1.0, 1.0);
  VectorXd a_star(4);
  for (int j = 0; j < 4; ++j) a_star(j) = rng.uniform(0.2, 0.8);
  VectorXd b = a_mat * a_star;
  SoResult r1 = so_solve_frame(a_mat, b);
  SoResult r2 = so_solve_frame(a_mat, b);
  REQUIRE(r1.activations == r2.activations);
  REQUIRE(r1.lambda == r2.lambda);
}

namespace {

LimbModel swing_limb() {
  LimbModel model;
  model.segments[0] = {7.5, 0.15, 0.42, {0.0, -0.18}};
  model.segments[1] = {3.5, 0.05, 0.43, {0.0, -0.19}};
  model.segments[2] = {1.0, 0.01, 0.20, {0.04, -0.05}};
  model.gravity = 9.81;
  model.plate_to_world = {0.0, {0.0, -0.93}};
  return model;
}

void antagonist_pairs(std::vector<MuscleParams>& params, MuscleGeometry& geom) {
  struct Row {
    const char* name;
    double r0[3];
  };
  const Row rows[] = {
      {"hip_flex", {0.040, 0.0, 0.0}},   {"hip_ext", {-0.040, 0.0, 0.0}},
      {"knee_ext", {0.0, 0.040, 0.0}},   {"knee_flex", {0.0, -0.040, 0.0}},
      {"ankle_df", {0.0, 0.0, 0.035}},   {"ankle_pf", {0.0, 0.0, -0.045}},
  };
  int m = 6;
  geom.names.clear();
  geom.c0.resize(m);
  geom.r0.resize(m, 3);
  geom.r1 = Eigen::MatrixXd::Zero(m, 3);
  params.clear();
  for (int n = 0; n < m; ++n) {
    MuscleParams p;
    p.name = rows[n].name;
    p.f_max = 1500.0;
    p.l_opt = 0.10;
    p.phi_opt = 0.10;
    p.l_slack = 0.20;
    p.v_max = 10.0;
    params.push_back(p);
    geom.names.push_back(rows[n].name);
    geom.c0(n) = p.l_slack + p.l_opt * std::cos(p.phi_opt);
    for (int j = 0; j < 3; ++j) geom.r0(n, j) = rows[n].r0[j];
  }
}

}  // namespace

TEST_CASE("trajectory solve balances the inverse-dynamics torques") {
  LimbModel model = swing_limb();
  std::vector<MuscleParams> params;
  MuscleGeometry geom;
  antagonist_pairs(params, geom);

  int t = 41;
  double dt = 0.005;
  JointTrajectory traj;
  traj.time.resize(t);
  traj.q.resize(t, 3);
  traj.qd.resize(t, 3);
  traj.qdd.resize(t, 3);
  traj.grf.assign(t, GrfSample{});
  double amp[3] = {0.15, 0.12, 0.10};
  double freq[3] = {1.0, 1.3, 0.8};
  double phase[3] = {0.0, 0.7, 1.9};
  for (int i = 0; i < t; ++i) {
    traj.time(i) = i * dt;
    for (int j = 0; j < 3; ++j) {
      double w = 2.0 * M_PI * freq[j];
      traj.q(i, j) = amp[j] * std::sin(w * traj.time(i) + phase[j]);
      traj.qd(i, j) = amp[j] * w * std::cos(w * traj.time(i) + phase[j]);
      traj.qdd(i, j) = -amp[j] * w * w * std::sin(w * traj.time(i) + phase[j]);
    }
  }
  traj.validate();

  SoTrajectoryResult sol = so_trajectory(model, params, geom, traj);
  REQUIRE(sol.infeasible_count == 0);
  REQUIRE(sol.activations.rows() == t);
  REQUIRE(sol.activations.cols() == 6);
  REQUIRE(sol.activations.minCoeff() >= 0.01 - 1e-12);
  REQUIRE(sol.activations.maxCoeff() <= 1.0 + 1e-12);

  // reconstruct joint torques from the solved forces through the moment arms;
  // this path goes through muscle_force rather than the solver's gain matrix
  for (int i = 0; i < t; ++i) {
    JointState s;
    s.q = traj.q.row(i);
    s.qdot = traj.qd.row(i);
    s.qddot = traj.qdd.row(i);
    Vector3d tau_req = required_torques(model, s, traj.grf[i]);
    MatrixXd arms = moment_arms(geom, s.q);
    Vector3d tau_m = Vector3d::Zero();
    for (int n = 0; n < 6; ++n)
      for (int j = 0; j < 3; ++j) tau_m(j) += arms(n, j) * sol.forces(i, n);
    REQUIRE((tau_m - tau_req).cwiseAbs().maxCoeff() <= 1e-6);
  }
}
