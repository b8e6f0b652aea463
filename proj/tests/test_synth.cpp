#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "msknet/common.hpp"
#include "msknet/default_model.hpp"
#include "msknet/loss.hpp"
#include "msknet/so_solver.hpp"
#include "msknet/synth.hpp"

using namespace msknet;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// per-frame gap between inverse dynamics and the applied muscle torques
double worst_consistency_gap(const LimbModel& model, const std::vector<MuscleParams>& params,
                             const MuscleGeometry& geom, const SynthResult& r) {
  MatrixXd vbars = trajectory_vbars(params, geom, r.traj.q, r.traj.dt());
  double worst = 0.0;
  for (int i = 0; i < r.traj.frames(); ++i) {
    JointState s;
    s.q = r.traj.q.row(i);
    s.qdot = r.traj.qd.row(i);
    s.qddot = r.traj.qdd.row(i);
    Vector3d tau_req = required_torques(model, s, r.traj.grf[i]);
    Vector3d tau_m =
        muscle_torques(params, geom, s.q, vbars.row(i).transpose(), r.activations.row(i).transpose());
    worst = std::max(worst, (tau_req - tau_m).cwiseAbs().maxCoeff());
  }
  return worst;
}

// six uniarticular muscles, one per torque direction per joint
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

TEST_CASE("zero moment arms reduce the rollout to the passive pendulum") {
  LimbModel model = default_limb();
  std::vector<MuscleParams> params = default_muscles();
  MuscleGeometry geom = default_geometry();
  geom.r0.setZero();
  geom.r1.setZero();

  SynthConfig cfg;
  cfg.duration = 0.5;
  cfg.gait.enabled = false;
  cfg.q0 = Vector3d(0.3, -0.4, 0.1);
  ExcitationSpec spec = random_excitations(geom.count(), 1.0, 42);
  SynthResult r = synth_gait(model, params, geom, spec, cfg);

  // independent passive rollout with the same substep schedule
  JointState s;
  s.q = cfg.q0;
  s.qdot = cfg.qd0;
  GrfSample swing;
  int nsub = 5;  // 5 ms frame over 1 ms substeps
  for (int i = 0; i < r.traj.frames(); ++i) {
    REQUIRE((r.traj.q.row(i).transpose() - s.q).cwiseAbs().maxCoeff() <= 1e-12);
    REQUIRE((r.traj.qd.row(i).transpose() - s.qdot).cwiseAbs().maxCoeff() <= 1e-12);
    for (int k = 0; k < nsub; ++k)
      s = forward_step(model, s, Vector3d::Zero(), swing, 1.0 / 200.0 / nsub);
  }
}

TEST_CASE("synthetic trajectories satisfy inverse dynamics at stored frames") {
  LimbModel model = default_limb();
  std::vector<MuscleParams> params = default_muscles();
  MuscleGeometry geom = default_geometry();

  SynthConfig cfg;
  cfg.duration = 2.0;
  ExcitationSpec spec = default_excitations(model, params, geom, cfg.gait.cycle_hz, 7);
  cfg.q0 = spec.reflex.reference(0.0);
  cfg.qd0 = spec.reflex.reference_rate(0.0);
  SynthResult r = synth_gait(model, params, geom, spec, cfg);

  REQUIRE(r.traj.frames() == 401);
  REQUIRE(r.activations.minCoeff() >= 0.01);
  REQUIRE(r.activations.maxCoeff() <= 1.0);
  REQUIRE(worst_consistency_gap(model, params, geom, r) <= 1e-6);

  // physics residual loss at the generator's own activations
  MatrixXd vbars = trajectory_vbars(params, geom, r.traj.q, r.traj.dt());
  std::vector<JointState> states(r.traj.frames());
  for (int i = 0; i < r.traj.frames(); ++i) {
    states[i].q = r.traj.q.row(i);
    states[i].qdot = r.traj.qd.row(i);
    states[i].qddot = r.traj.qdd.row(i);
  }
  double l_d = dynamics_loss(model, params, geom, r.activations, states, r.traj.grf, vbars);
  REQUIRE(l_d <= 1e-10);

  // the scripted load never lifts off and cycles between its trough and peak
  double fy_min = 1e9, fy_max = -1e9;
  for (const auto& g : r.traj.grf) {
    REQUIRE(g.in_contact);
    fy_min = std::min(fy_min, g.force_plate(1));
    fy_max = std::max(fy_max, g.force_plate(1));
  }
  REQUIRE(fy_min > 150.0);
  REQUIRE(fy_max > 2.0 * fy_min);
}

TEST_CASE("changing the excitation seed changes the motion, not the property") {
  LimbModel model = default_limb();
  std::vector<MuscleParams> params = default_muscles();
  MuscleGeometry geom = default_geometry();

  auto roll = [&](std::uint64_t seed) {
    SynthConfig cfg;
    cfg.duration = 1.0;
    ExcitationSpec spec = default_excitations(model, params, geom, 1.0, seed);
    cfg.q0 = spec.reflex.reference(0.0);
    cfg.qd0 = spec.reflex.reference_rate(0.0);
    return synth_gait(model, params, geom, spec, cfg);
  };
  SynthResult a = roll(1);
  SynthResult b = roll(2);

  REQUIRE((a.traj.q - b.traj.q).cwiseAbs().maxCoeff() > 1e-3);
  REQUIRE(worst_consistency_gap(model, params, geom, a) <= 1e-6);
  REQUIRE(worst_consistency_gap(model, params, geom, b) <= 1e-6);
}

TEST_CASE("default model stays bounded over a long rollout") {
  LimbModel model = default_limb();
  std::vector<MuscleParams> params = default_muscles();
  MuscleGeometry geom = default_geometry();

  SynthConfig cfg;
  cfg.duration = 10.0;
  ExcitationSpec spec = default_excitations(model, params, geom, cfg.gait.cycle_hz, 20260825);
  cfg.q0 = spec.reflex.reference(0.0);
  cfg.qd0 = spec.reflex.reference_rate(0.0);
  SynthResult r = synth_gait(model, params, geom, spec, cfg);
  REQUIRE(r.traj.frames() == 2001);
  REQUIRE(r.traj.q.cwiseAbs().maxCoeff() < 1.6);
  REQUIRE(r.traj.qd.cwiseAbs().maxCoeff() < 5.0);
}

TEST_CASE("runaway states abort with a diagnostic") {
  LimbModel model = default_limb();
  std::vector<MuscleParams> params = default_muscles();
  MuscleGeometry geom = default_geometry();

  SynthConfig cfg;
  cfg.duration = 2.0;
  cfg.qd0 = Vector3d(30.0, 0.0, 0.0);
  ExcitationSpec spec = default_excitations(model, params, geom, 1.0, 3);
  REQUIRE_THROWS_WITH(synth_gait(model, params, geom, spec, cfg),
                      Catch::Matchers::ContainsSubstring("excursion"));
}

TEST_CASE("non-redundant reference solve recovers the generator activations") {
  LimbModel model = default_limb();
  std::vector<MuscleParams> params;
  MuscleGeometry geom;
  antagonist_pairs(params, geom);

  // reciprocal drive: agonists oscillate well above the floor, antagonists
  // pinned at it, so minimum effort has a unique reconstruction
  ExcitationSpec spec;
  for (int n = 0; n < 6; ++n) {
    ExcitationWave w;
    if (n % 2 == 0) {
      w.base = 0.28;
      w.amp = {0.12};
      w.freq = {1.0};
      w.phase = {0.9 * n};
    } else {
      w.base = 0.01;
    }
    spec.waves.push_back(w);
  }

  SynthConfig cfg;
  cfg.duration = 2.0;
  cfg.gait.enabled = false;
  cfg.q0 = Vector3d(0.0, 0.0, 0.0);
  SynthResult r = synth_gait(model, params, geom, spec, cfg);
  REQUIRE(worst_consistency_gap(model, params, geom, r) <= 1e-6);

  SoTrajectoryResult sol = so_trajectory(model, params, geom, r.traj);
  REQUIRE(sol.infeasible_count == 0);
  REQUIRE((sol.activations - r.activations).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("redundant reference solve matches torques, not activations") {
  LimbModel model = default_limb();
  std::vector<MuscleParams> params = default_muscles();
  MuscleGeometry geom = default_geometry();

  SynthConfig cfg;
  cfg.duration = 1.5;
  ExcitationSpec spec = default_excitations(model, params, geom, cfg.gait.cycle_hz, 11);
  cfg.q0 = spec.reflex.reference(0.0);
  cfg.qd0 = spec.reflex.reference_rate(0.0);
  SynthResult r = synth_gait(model, params, geom, spec, cfg);

  SoTrajectoryResult sol = so_trajectory(model, params, geom, r.traj);
  REQUIRE(sol.infeasible_count == 0);
  REQUIRE((sol.activations - r.activations).cwiseAbs().maxCoeff() > 1e-3);

  MatrixXd vbars = trajectory_vbars(params, geom, r.traj.q, r.traj.dt());
  for (int i = 0; i < r.traj.frames(); ++i) {
    JointState s;
    s.q = r.traj.q.row(i);
    s.qdot = r.traj.qd.row(i);
    s.qddot = r.traj.qdd.row(i);
    Vector3d tau_req = required_torques(model, s, r.traj.grf[i]);
    Vector3d tau_so = muscle_torques(params, geom, s.q, vbars.row(i).transpose(),
                                     sol.activations.row(i).transpose());
    REQUIRE((tau_so - tau_req).cwiseAbs().maxCoeff() <= 1e-6);
  }
}
