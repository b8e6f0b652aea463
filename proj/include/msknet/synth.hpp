#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "msknet/common.hpp"
#include "msknet/data.hpp"
#include "msknet/dynamics.hpp"
#include "msknet/muscle.hpp"

// Forward-dynamics gait synthesizer. Feedforward excitation waves plus an
// optional PD tracking reflex drive the limb under the same muscle model the
// estimator trains against, with a scripted ground-reaction profile during a
// periodic stance window. Frames are sampled at the capture rate; within a
// frame the excitation and GRF sample are held and the state advances by RK4
// substeps whose muscle torque tracks the substep posture and instantaneous
// fiber rate. The stored q-ddot comes from the frame-start acceleration
// evaluated with the stored backward-difference fiber velocity, which makes
// the trajectory exactly consistent with inverse dynamics at stored states.

namespace msknet {

struct ExcitationWave {
  double base = 0.2;
  std::vector<double> amp, freq, phase;  // a(t) = base + sum amp sin(2 pi freq t + phase)
};

// PD recruitment toward a sinusoidal per-joint reference. Each muscle is
// recruited in proportion to its signed constant-term moment arm, so a joint
// error excites exactly the muscles whose pull corrects it and relaxes their
// antagonists. At human-scale gains this loop is what keeps the rollout
// bounded; open-loop waves alone cannot stabilize body-scale ground loads.
// Gains are per joint: the loop rate each joint tolerates scales with its
// reflected inertia, and a damping gain sized for the hip flips the sign of
// the light foot's velocity within one excitation hold.
struct TrackingReflex {
  Vector3d k_p = Vector3d::Zero();  // activation per rad of joint error at unit routing
  Vector3d k_d = Vector3d::Zero();  // activation per rad/s
  double freq = 1.0;                // Hz, reference cycle rate
  Vector3d mid = Vector3d::Zero(), amp = Vector3d::Zero(), phase = Vector3d::Zero();
  MatrixXd routing;  // M x 3 signed weights, typically moment arm / nominal arm

  bool active() const {
    return (k_p.cwiseAbs().sum() + k_d.cwiseAbs().sum()) > 0.0 && routing.size() > 0;
  }

  Vector3d reference(double t) const {
    Vector3d r;
    for (int j = 0; j < 3; ++j)
      r(j) = mid(j) + amp(j) * std::sin(2.0 * M_PI * freq * t + phase(j));
    return r;
  }

  Vector3d reference_rate(double t) const {
    Vector3d r;
    for (int j = 0; j < 3; ++j)
      r(j) = amp(j) * 2.0 * M_PI * freq * std::cos(2.0 * M_PI * freq * t + phase(j));
    return r;
  }
};

struct ExcitationSpec {
  std::vector<ExcitationWave> waves;  // one per muscle
  TrackingReflex reflex;
  VectorXd support;            // per-muscle load feedforward weight, may be empty
  double support_ref = 400.0;  // N; support(n) is the excitation added per support_ref
  double support_offset = 45.0;  // N of load carried before support engages
  double lo = 0.01, hi = 1.0;

  // feedforward waves only
  double value(int muscle, double t) const {
    const ExcitationWave& w = waves[muscle];
    double a = w.base;
    for (std::size_t h = 0; h < w.amp.size(); ++h)
      a += w.amp[h] * std::sin(2.0 * M_PI * w.freq[h] * t + w.phase[h]);
    return std::min(hi, std::max(lo, a));
  }

  // waves, load-proportional support feedforward, and the tracking reflex at
  // the current joint state. Pure error feedback would need large tracking
  // errors to hold body-scale ground loads; recruiting the anti-gravity
  // muscles in proportion to the load above support_offset carries the bulk
  // and leaves the reflex trimming residuals. The offset matters: joint
  // demands are affine in the vertical load, and a feedforward through the
  // origin overshoots at the load trough, which walks the limb off its
  // reference.
  double value(int muscle, double t, const Vector3d& q, const Vector3d& qd,
               double vertical_load = 0.0) const {
    const ExcitationWave& w = waves[muscle];
    double a = w.base;
    for (std::size_t h = 0; h < w.amp.size(); ++h)
      a += w.amp[h] * std::sin(2.0 * M_PI * w.freq[h] * t + w.phase[h]);
    if (support.size() > muscle && vertical_load > support_offset)
      a += support(muscle) * (vertical_load - support_offset) / support_ref;
    if (reflex.active()) {
      Vector3d ep = reflex.k_p.cwiseProduct(reflex.reference(t) - q);
      Vector3d ev = reflex.k_d.cwiseProduct(reflex.reference_rate(t) - qd);
      a += reflex.routing.row(muscle).dot(ep + ev);
    }
    return std::min(hi, std::max(lo, a));
  }
};

// Two harmonics of the gait cycle per muscle, phases and amplitudes seeded.
// Ranges keep the waveform strictly inside the activation box so the clamp
// in value() never introduces kinks.
inline ExcitationSpec random_excitations(int n_muscles, double cycle_hz, std::uint64_t seed) {
  require(n_muscles >= 1, "excitations: need at least one muscle");
  require(cycle_hz > 0.0, "excitations: cycle rate must be positive");
  ExcitationSpec spec;
  for (int n = 0; n < n_muscles; ++n) {
    Rng rng(derive_seed(seed, 0xe8c17a, static_cast<std::uint64_t>(n)));
    ExcitationWave w;
    w.base = rng.uniform(0.17, 0.30);
    w.amp = {rng.uniform(0.05, 0.10), rng.uniform(0.02, 0.05)};
    w.freq = {cycle_hz, 2.0 * cycle_hz};
    w.phase = {rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.0, 2.0 * M_PI)};
    spec.waves.push_back(w);
  }
  return spec;
}

// Scripted ground reaction: a base load plus two raised-cosine vertical
// humps, a small brake/propel shear, and a centre of pressure near the
// ankle's current station on the plate. The COP shifts with foot pitch the
// way flat-foot contact does (toes-down moves pressure toward the toes),
// which is the torsional spring that actually keeps a planted foot upright;
// without it the light foot segment has no dorsiflexion authority at all and
// any plantar surplus spins it away. The default keeps the foot loaded
// through the whole cycle (stance_fraction 1) so each joint's torque demand
// keeps one sign; shrink stance_fraction for an airborne phase.
struct GaitScript {
  double cycle_hz = 1.0;
  double stance_fraction = 1.0;
  double grf_base = 180.0;       // N held through stance
  double grf_peak = 330.0;       // N per vertical hump
  double grf_shear = 4.0;        // N shear amplitude
  double cop_back = -0.008;      // m relative to the ankle, along the plate
  double cop_forward = 0.015;
  double pitch_flat = -0.51;     // rad, world foot pitch with the sole flat
  double cop_pitch_gain = 0.10;  // m of COP travel per rad of pitch error
  double cop_pitch_damp = 0.012; // m per rad/s of pitch rate
  double cop_min = -0.045;       // COP excursion limits, m from the ankle
  double cop_max = 0.13;
  bool enabled = true;

  GrfSample sample(double t, double ankle_plate_x, double foot_pitch,
                   double foot_pitch_rate) const {
    GrfSample g;
    if (!enabled) return g;
    double phase = t * cycle_hz - std::floor(t * cycle_hz);
    if (phase >= stance_fraction) return g;
    double s = phase / stance_fraction;
    auto hump = [](double x, double c, double w) {
      return std::abs(x - c) < w ? 0.5 * (1.0 + std::cos(M_PI * (x - c) / w)) : 0.0;
    };
    g.in_contact = true;
    g.force_plate(0) = -grf_shear * std::sin(2.0 * M_PI * s);
    g.force_plate(1) = grf_base + grf_peak * (hump(s, 0.3, 0.25) + hump(s, 0.7, 0.25));
    double offset = cop_back + (cop_forward - cop_back) * s +
                    cop_pitch_gain * (pitch_flat - foot_pitch) -
                    cop_pitch_damp * foot_pitch_rate;
    offset = std::min(cop_max, std::max(cop_min, offset));
    g.cop_plate(0) = ankle_plate_x + offset;
    g.cop_plate(1) = 0.0;
    return g;
  }
};

struct SynthConfig {
  double duration = 10.0;   // s
  double rate = 200.0;      // Hz
  double substep_dt = 1e-3;  // s, RK4 substep
  Vector3d q0{0.1, -0.3, 0.0};
  Vector3d qd0{0.0, 0.0, 0.0};
  GaitScript gait;
  std::string subject = "synthetic";
  std::string condition = "default";
};

struct SynthResult {
  JointTrajectory traj;
  MatrixXd activations;  // T x M, the excitations actually applied
  MatrixXd forces;       // T x M
};

inline SynthResult synth_gait(const LimbModel& model, const std::vector<MuscleParams>& params,
                              const MuscleGeometry& geom, const ExcitationSpec& spec,
                              const SynthConfig& cfg) {
  require(spec.waves.size() == static_cast<std::size_t>(geom.count()),
          "synth: excitation spec does not cover every muscle");
  require(!spec.reflex.active() || spec.reflex.routing.rows() == geom.count(),
          "synth: reflex routing does not cover every muscle");
  require(cfg.duration > 0.0 && cfg.rate > 0.0, "synth: duration and rate must be positive");
  require(cfg.substep_dt > 0.0, "synth: substep must be positive");

  int t_frames = static_cast<int>(std::llround(cfg.duration * cfg.rate)) + 1;
  int m = geom.count();
  double frame_dt = 1.0 / cfg.rate;
  int nsub = std::max(1, static_cast<int>(std::llround(frame_dt / cfg.substep_dt)));
  double sub_dt = frame_dt / nsub;

  SynthResult out;
  out.traj.time.resize(t_frames);
  out.traj.q.resize(t_frames, 3);
  out.traj.qd.resize(t_frames, 3);
  out.traj.qdd.resize(t_frames, 3);
  out.traj.grf.resize(t_frames);
  out.traj.subject = cfg.subject;
  out.traj.condition = cfg.condition;
  out.activations.resize(t_frames, m);
  out.forces.resize(t_frames, m);

  JointState state;
  state.q = cfg.q0;
  state.qdot = cfg.qd0;
  VectorXd prev_fiber;
  for (int i = 0; i < t_frames; ++i) {
    double t = i * frame_dt;
    require(state.q.cwiseAbs().maxCoeff() <= M_PI,
            "synth: joint excursion beyond pi at t = " + std::to_string(t) +
                " s; reduce excitation or GRF amplitudes");

    ComKinematics kin = com_kinematics(model, state);
    double ankle_plate_x = model.plate_to_world.to_plate(kin.joint_pos[2])(0);
    GrfSample grf = cfg.gait.sample(t, ankle_plate_x, state.q.sum(), state.qdot.sum());

    VectorXd a(m);
    for (int n = 0; n < m; ++n)
      a(n) = spec.value(n, t, state.q, state.qdot, grf.in_contact ? grf.force_plate(1) : 0.0);

    // fiber velocity by the same backward difference the loss pipeline uses
    VectorXd lmt = musculotendon_lengths(geom, state.q);
    VectorXd fiber;
    VectorXd vbar = fiber_velocities(params, geom, state.q, prev_fiber, frame_dt, &fiber);
    prev_fiber = fiber;

    Vector3d tau_m = muscle_torques(params, geom, state.q, vbar, a);
    Vector3d tau_total = tau_m;
    if (grf.in_contact) tau_total += grf_torques(model, state, grf);
    state.qddot = forward_acceleration(model, state.q, state.qdot, tau_total);

    out.traj.time(i) = t;
    out.traj.q.row(i) = state.q;
    out.traj.qd.row(i) = state.qdot;
    out.traj.qdd.row(i) = state.qddot;
    out.traj.grf[i] = grf;
    out.activations.row(i) = a;
    for (int n = 0; n < m; ++n)
      out.forces(i, n) = muscle_force(params[n], a(n), lmt(n), vbar(n));

    if (i + 1 == t_frames) break;
    JointState s = state;
    for (int k = 0; k < nsub; ++k) {
      // excitation and GRF held over the frame; the force-velocity factor
      // follows the instantaneous fiber rate so the muscles damp continuously
      // instead of reacting one frame late
      VectorXd lmt_s = musculotendon_lengths(geom, s.q);
      MatrixXd arms = moment_arms(geom, s.q);
      VectorXd vb(m);
      for (int n = 0; n < m; ++n) {
        FiberGeometry fg = fiber_geometry(params[n], lmt_s(n));
        double along = lmt_s(n) - params[n].l_slack;
        double dlm_dlmt = fg.floored ? 0.0 : along / fg.fiber_length;
        double lmt_rate = -arms.row(n).dot(s.qdot);
        vb(n) = dlm_dlmt * lmt_rate / (params[n].v_max * params[n].l_opt);
      }
      Vector3d tau = muscle_torques(params, geom, s.q, vb, a);
      s = forward_step(model, s, tau, grf, sub_dt);
    }
    state = s;
  }
  out.traj.validate();
  return out;
}

}  // namespace msknet
