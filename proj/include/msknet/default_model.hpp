#pragma once

#include <vector>

#include "msknet/dynamics.hpp"
#include "msknet/muscle.hpp"
#include "msknet/so_solver.hpp"
#include "msknet/synth.hpp"

// Default synthetic musculoskeletal model: a planar thigh-shank-foot limb and
// ten lower-limb muscles (psoas, iliacus, rectus femoris, biceps femoris,
// semimembranosus, the three vasti, both gastrocnemius heads). The joint
// convention is flexion-positive with the limb hanging straight down at q = 0;
// knee flexion is therefore negative. Strengths and moment arms sit at adult
// human scale so joint demands reach tens of N m and the muscle gain matrix
// keeps all three singular values far above the effort-regularization knee.
//
// The default motion is a continuously loaded squat-bob: the limb crouches
// with the ankle slightly behind the hip's plumb line and the scripted ground
// load never drops to zero. That keeps every joint demand one-signed (hip
// flexion, knee extension, ankle plantarflexion), which an effort-regularized
// estimator needs: a demand that swings sign would ask the unconstrained
// physics optimum for negative antagonist activations that a bound-respecting
// reference can never show. The hamstring pair consequently idles at the
// activation floor in the reference solution; it exists to carry the
// passive/co-contraction texture, not labels.
//
// Deliberate departures from anatomy, chosen to keep a ten-muscle set
// controllable: the foot is boot-weighted with its COM behind and below the
// ankle (no dorsiflexor exists, so the unloaded foot must demand more plantar
// torque than the activation floors already deliver), hamstring moment arms
// are a few millimetres (their full-size arms would drag the one-sided knee
// demand into antagonist territory), and the gastrocnemius fibers are long so
// the biarticular stretch never runs off the active curve. Moment-arm
// polynomials are centered so every fiber sits at optimal length at the
// mid-crouch rest posture (0.42, -0.95, 0).

namespace msknet {

inline LimbModel default_limb() {
  LimbModel m;
  m.segments[0] = {9.0, 0.18, 0.42, {0.0, -0.18}};
  m.segments[1] = {4.0, 0.06, 0.43, {0.0, -0.19}};
  m.segments[2] = {2.2, 0.09, 0.20, {-0.06, -0.04}};
  m.gravity = 9.81;
  m.plate_to_world = {0.0, {0.0, -0.80}};
  return m;
}

// Joint ranges the geometry is validated over (hip, knee, ankle; rad).
inline void default_joint_range(Vector3d& lo, Vector3d& hi) {
  lo = Vector3d(-0.7, -1.6, -0.8);
  hi = Vector3d(0.9, 0.1, 0.8);
}

inline Vector3d default_rest_posture() { return Vector3d(0.42, -0.95, 0.0); }

namespace detail {

struct DefaultMuscleRow {
  const char* name;
  double f_max, l_opt, phi_opt, l_slack, v_max;
  double r0[3];
  double r1[3];
};

inline const std::vector<DefaultMuscleRow>& default_muscle_rows() {
  static const std::vector<DefaultMuscleRow> rows = {
      {"PS", 2400.0, 0.150, 0.13, 0.16, 6.0, {0.050, 0.0, 0.0}, {-0.004, 0.0, 0.0}},
      {"IL", 2200.0, 0.150, 0.14, 0.10, 6.0, {0.048, 0.0, 0.0}, {-0.004, 0.0, 0.0}},
      {"RF", 2200.0, 0.160, 0.09, 0.31, 6.0, {0.045, 0.038, 0.0}, {-0.003, -0.005, 0.0}},
      {"BF", 2000.0, 0.170, 0.00, 0.34, 6.0, {-0.010, -0.010, 0.0}, {0.001, 0.001, 0.0}},
      {"SM", 2200.0, 0.160, 0.26, 0.36, 6.0, {-0.011, -0.009, 0.0}, {0.001, 0.001, 0.0}},
      {"VI", 3000.0, 0.150, 0.05, 0.14, 6.0, {0.0, 0.040, 0.0}, {0.0, -0.005, 0.0}},
      {"VL", 3400.0, 0.150, 0.09, 0.16, 6.0, {0.0, 0.042, 0.0}, {0.0, -0.006, 0.0}},
      {"VM", 2800.0, 0.150, 0.09, 0.13, 6.0, {0.0, 0.038, 0.0}, {0.0, -0.005, 0.0}},
      {"GL", 2000.0, 0.220, 0.14, 0.38, 6.0, {0.0, -0.007, -0.033}, {0.0, 0.001, 0.002}},
      {"GM", 2400.0, 0.200, 0.30, 0.39, 6.0, {0.0, -0.008, -0.036}, {0.0, 0.001, 0.002}},
  };
  return rows;
}

}  // namespace detail

inline std::vector<MuscleParams> default_muscles() {
  std::vector<MuscleParams> out;
  for (const auto& r : detail::default_muscle_rows()) {
    MuscleParams p;
    p.name = r.name;
    p.f_max = r.f_max;
    p.l_opt = r.l_opt;
    p.phi_opt = r.phi_opt;
    p.l_slack = r.l_slack;
    p.v_max = r.v_max;
    p.validate();
    out.push_back(p);
  }
  return out;
}

inline MuscleGeometry default_geometry() {
  const auto& rows = detail::default_muscle_rows();
  int m = static_cast<int>(rows.size());
  MuscleGeometry g;
  g.c0.resize(m);
  g.r0.resize(m, 3);
  g.r1.resize(m, 3);
  Vector3d q_mid = default_rest_posture();
  for (int n = 0; n < m; ++n) {
    const auto& r = rows[n];
    g.names.push_back(r.name);
    for (int j = 0; j < 3; ++j) {
      g.r0(n, j) = r.r0[j];
      g.r1(n, j) = r.r1[j];
    }
    // anchor: fiber at optimal length (zero tendon strain model) at q_mid
    double path = 0.0;
    for (int j = 0; j < 3; ++j) path += r.r0[j] * q_mid(j) + 0.5 * r.r1[j] * q_mid(j) * q_mid(j);
    g.c0(n) = r.l_slack + r.l_opt * std::cos(r.phi_opt) + path;
  }
  g.validate();
  return g;
}

// Baseline activations that statically hold the rest posture (minimum-effort
// torque balance against gravity), found once per model. Keeping the mean
// drive at this balance point stops the rollout from drifting.
inline VectorXd static_balance_activations(const LimbModel& model,
                                           const std::vector<MuscleParams>& params,
                                           const MuscleGeometry& geom, const Vector3d& q) {
  FrameConstants fc = frame_constants(params, geom, q, VectorXd::Zero(geom.count()));
  Vector3d target = gravity_vector(model, q) - fc.passive;
  SoResult r = so_solve_frame(fc.gains, target);
  require(r.feasible, "static balance: rest posture is not muscle-feasible");
  return r.activations;
}

// Default excitation drive: the static-balance baseline plus seeded
// two-harmonic texture waves, a load-proportional support feedforward on the
// anti-gravity muscles, and a PD reflex that recruits every muscle through
// its signed moment-arm signature to track the squat-bob reference. The
// feedforward carries the bulk of the scripted ground load (the reflex alone
// would need large tracking errors to hold it); the waves keep the drive from
// being a pure function of load and error. The knee reference runs at twice
// the hip amplitude in antiphase, which holds the ankle's ground station a
// few centimetres behind the hip's plumb line so the vertical load biases the
// hip toward flexion at every depth.
inline ExcitationSpec default_excitations(const LimbModel& model,
                                          const std::vector<MuscleParams>& params,
                                          const MuscleGeometry& geom, double cycle_hz,
                                          std::uint64_t seed) {
  VectorXd balance =
      static_balance_activations(model, params, geom, default_rest_posture());
  ExcitationSpec spec;
  int m = geom.count();
  for (int n = 0; n < m; ++n) {
    Rng rng(derive_seed(seed, 0xe8c17a, static_cast<std::uint64_t>(n)));
    ExcitationWave w;
    w.base = balance(n) + rng.uniform(0.015, 0.035);
    w.amp = {rng.uniform(0.01, 0.025), rng.uniform(0.005, 0.012)};
    w.freq = {cycle_hz, 2.0 * cycle_hz};
    w.phase = {rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.0, 2.0 * M_PI)};
    spec.waves.push_back(w);
  }

  Rng rng(derive_seed(seed, 0x6a17b3, 0));
  static const double support_base[] = {0.07, 0.07, 0.06, 0.0, 0.0,
                                        0.18, 0.18, 0.18, 0.03, 0.03};
  spec.support.resize(m);
  for (int n = 0; n < m; ++n)
    spec.support(n) = support_base[n] * rng.uniform(0.9, 1.1);

  TrackingReflex& rf = spec.reflex;
  rf.k_p = Vector3d(2.2, 2.2, 0.7);
  rf.k_d = Vector3d(0.35, 0.22, 0.10);
  rf.freq = cycle_hz;
  rf.mid = default_rest_posture();
  rf.amp = Vector3d(0.06 * rng.uniform(0.92, 1.08), -0.121 * rng.uniform(0.92, 1.08),
                    0.05 * rng.uniform(0.9, 1.1));
  double hip_phase = -0.1 * M_PI + rng.uniform(-0.10, 0.10);
  rf.phase = Vector3d(hip_phase, hip_phase + rng.uniform(-0.06, 0.06), rng.uniform(0.0, 2.0 * M_PI));
  rf.routing.resize(m, 3);
  for (int n = 0; n < m; ++n)
    for (int j = 0; j < 3; ++j) rf.routing(n, j) = geom.r0(n, j) / 0.05;
  return spec;
}

}  // namespace msknet
