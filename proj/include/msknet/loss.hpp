#pragma once

#include <Eigen/Dense>
#include <vector>

#include "msknet/common.hpp"
#include "msknet/data.hpp"
#include "msknet/dynamics.hpp"
#include "msknet/muscle.hpp"
#include "msknet/tape.hpp"

// Physics-informed objective: dynamics residual + effort + boundary penalty,
// plus the supervised MSE alternative. Each window's prediction is assigned to
// the window's final frame; the dynamics residual is evaluated at exactly
// those frames.

namespace msknet {

struct LossWeights {
  double w_d = 3.0;
  double w_p = 1000.0;
  double w_b = 500.0;

  void validate() const {
    require(w_d >= 0.0 && w_p >= 0.0 && w_b >= 0.0, "loss weights must be nonnegative");
  }
};

struct LossBreakdown {
  double l_d = 0.0, l_p = 0.0, l_b = 0.0, l_total = 0.0;
  Vector3d joint_residual = Vector3d::Zero();  // mean |residual| per joint, N*m
};

// Everything the physics loss needs about one frame, precomputed once per
// trajectory: the inverse-dynamics torque demand and the affine
// activation-to-torque map at the frame's kinematic state.
struct FramePhysics {
  Vector3d tau_req = Vector3d::Zero();
  Eigen::Matrix<double, 3, Eigen::Dynamic> gains;  // 3 x M
  Vector3d passive = Vector3d::Zero();
};

// Normalized fiber velocities for every frame of a trajectory, chained
// backward differences at the frame rate (zero at the first frame).
inline MatrixXd trajectory_vbars(const std::vector<MuscleParams>& params,
                                 const MuscleGeometry& geom, const MatrixXd& q, double dt) {
  int t = static_cast<int>(q.rows());
  int m = geom.count();
  MatrixXd vbars(t, m);
  VectorXd prev;
  for (int i = 0; i < t; ++i) {
    VectorXd fiber;
    vbars.row(i) = fiber_velocities(params, geom, q.row(i), prev, dt, &fiber).transpose();
    prev = fiber;
  }
  return vbars;
}

inline std::vector<FramePhysics> precompute_frame_physics(const LimbModel& model,
                                                          const std::vector<MuscleParams>& params,
                                                          const MuscleGeometry& geom,
                                                          const JointTrajectory& traj) {
  require(traj.has_qd() && traj.has_qdd(), "frame physics: differentiate the trajectory first");
  MatrixXd vbars = trajectory_vbars(params, geom, traj.q, traj.dt());
  std::vector<FramePhysics> out(traj.frames());
  for (int t = 0; t < traj.frames(); ++t) {
    JointState s;
    s.q = traj.q.row(t);
    s.qdot = traj.qd.row(t);
    s.qddot = traj.qdd.row(t);
    FrameConstants fc = frame_constants(params, geom, s.q, vbars.row(t).transpose());
    out[t].gains = fc.gains;
    out[t].passive = fc.passive;
    out[t].tau_req = required_torques(model, s, traj.grf[t]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plain-number losses (evaluation, oracles).

inline double dynamics_loss(const LimbModel& model, const std::vector<MuscleParams>& params,
                            const MuscleGeometry& geom, const MatrixXd& predictions,
                            const std::vector<JointState>& states,
                            const std::vector<GrfSample>& grf, const MatrixXd& vbars) {
  int t = static_cast<int>(predictions.rows());
  require(static_cast<int>(states.size()) == t && static_cast<int>(grf.size()) == t &&
              vbars.rows() == t,
          "dynamics_loss: misaligned lengths");
  double acc = 0.0;
  for (int i = 0; i < t; ++i) {
    Vector3d tau_req = required_torques(model, states[i], grf[i]);
    Vector3d tau_h =
        muscle_torques(params, geom, states[i].q, vbars.row(i).transpose(), predictions.row(i));
    acc += (tau_req - tau_h).squaredNorm();
  }
  return acc / t;
}

inline double performance_loss(const MatrixXd& predictions) {
  require(predictions.rows() > 0, "performance_loss: empty");
  return predictions.squaredNorm() / double(predictions.rows());
}

inline double boundary_loss(const MatrixXd& predictions, double lo = 0.01, double hi = 1.0) {
  require(predictions.rows() > 0, "boundary_loss: empty");
  double acc = 0.0;
  for (Eigen::Index r = 0; r < predictions.rows(); ++r)
    for (Eigen::Index c = 0; c < predictions.cols(); ++c) {
      double a = predictions(r, c);
      double below = std::max(0.0, lo - a);
      double above = std::max(0.0, a - hi);
      acc += below * below + above * above;
    }
  return acc / double(predictions.rows());
}

inline LossBreakdown total_loss(const LossWeights& w, double l_d, double l_p, double l_b) {
  w.validate();
  LossBreakdown out;
  out.l_d = l_d;
  out.l_p = l_p;
  out.l_b = l_b;
  out.l_total = w.w_d * l_d + w.w_p * l_p + w.w_b * l_b;
  return out;
}

inline double supervised_mse(const MatrixXd& predictions, const MatrixXd& labels) {
  require(predictions.rows() == labels.rows() && predictions.cols() == labels.cols(),
          "supervised_mse: shape mismatch");
  require(predictions.size() > 0, "supervised_mse: empty");
  return (predictions - labels).squaredNorm() / double(predictions.size());
}

// ---------------------------------------------------------------------------
// Tape-side assembly for training. `activations` is B x M; frames[b] holds the
// physics constants of window b's final frame.

struct PhysicsLossVars {
  Var l_d, l_p, l_b, total;
};

inline PhysicsLossVars physics_loss_on_tape(Tape& tape, Var activations,
                                            const std::vector<FramePhysics>& frames,
                                            const LossWeights& w, double lo = 0.01,
                                            double hi = 1.0) {
  int batch = static_cast<int>(tape.value(activations).rows());
  require(static_cast<int>(frames.size()) == batch, "physics loss: batch/frames mismatch");

  Var resid;
  for (int b = 0; b < batch; ++b) {
    Var ab = tape.slice_rows(activations, b, 1);                       // 1 x M
    Var tau = tape.matmul(ab, tape.input(frames[b].gains.transpose()));  // 1 x 3
    MatrixXd offset = (frames[b].tau_req - frames[b].passive).transpose();
    Var rb = tape.sub(tape.input(offset), tau);
    resid = b == 0 ? rb : tape.concat_rows(resid, rb);
  }
  PhysicsLossVars out;
  out.l_d = tape.scale(tape.reduce_sum(tape.square(resid)), 1.0 / batch);
  out.l_p = tape.scale(tape.reduce_sum(tape.square(activations)), 1.0 / batch);
  Var below = tape.square(tape.max_const(tape.add_const(tape.neg(activations), lo), 0.0));
  Var above = tape.square(tape.max_const(tape.add_const(activations, -hi), 0.0));
  out.l_b = tape.scale(tape.reduce_sum(tape.add(below, above)), 1.0 / batch);
  out.total = tape.add(tape.add(tape.scale(out.l_d, w.w_d), tape.scale(out.l_p, w.w_p)),
                       tape.scale(out.l_b, w.w_b));
  return out;
}

inline Var supervised_loss_on_tape(Tape& tape, Var predictions, const MatrixXd& labels) {
  Var diff = tape.sub(predictions, tape.input(labels));
  return tape.reduce_mean(tape.square(diff));
}

inline LossBreakdown breakdown_from_tape(const Tape& tape, const PhysicsLossVars& v) {
  LossBreakdown b;
  b.l_d = tape.value(v.l_d)(0, 0);
  b.l_p = tape.value(v.l_p)(0, 0);
  b.l_b = tape.value(v.l_b)(0, 0);
  b.l_total = tape.value(v.total)(0, 0);
  return b;
}

}  // namespace msknet
