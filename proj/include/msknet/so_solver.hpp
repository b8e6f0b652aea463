#pragma once

#include <Eigen/Dense>
#include <vector>

#include "msknet/common.hpp"
#include "msknet/data.hpp"
#include "msknet/loss.hpp"
#include "msknet/muscle.hpp"

// Per-frame static optimization: minimize sum of squared activations subject
// to the joint torque balance gains * a = target inside the activation box.
// Solved in the dual: a(lambda) = clip(gains^T lambda / 2), with a semismooth
// Newton iteration on the dual gradient. Infeasible frames fall back to a
// lexicographic solve (violation first, then effort) and are flagged, never
// silently clamped.

namespace msknet {

struct SoResult {
  VectorXd activations;
  VectorXd lambda;            // equality multipliers
  double objective = 0.0;     // sum of squared activations
  double equality_residual = 0.0;  // ||gains a - target||_inf vs the original target
  double kkt_residual = 0.0;
  bool feasible = false;
};

namespace detail {

inline VectorXd clip_vec(const VectorXd& v, double lo, double hi) {
  return v.cwiseMax(lo).cwiseMin(hi);
}

// KKT residual for min sum a^2 s.t. A a = b, lo <= a <= hi. Stationarity:
// s = 2a - A^T lambda must vanish on interior coordinates, be >= 0 at the
// lower bound and <= 0 at the upper bound.
inline double so_kkt_residual(const MatrixXd& a_mat, const VectorXd& b, double lo, double hi,
                              const VectorXd& a, const VectorXd& lambda) {
  double res = (a_mat * a - b).cwiseAbs().maxCoeff();
  VectorXd s = 2.0 * a - a_mat.transpose() * lambda;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    double tol = 1e-10;
    if (a(i) <= lo + tol) {
      res = std::max(res, std::max(0.0, -s(i)));
    } else if (a(i) >= hi - tol) {
      res = std::max(res, std::max(0.0, s(i)));
    } else {
      res = std::max(res, std::abs(s(i)));
    }
  }
  return res;
}

// Dual ascent for the feasible case. The dual of the equality-constrained
// box QP is concave piecewise quadratic, so each iteration takes a Newton
// (or gradient, when the curvature block is degenerate) direction and
// maximizes exactly along it by walking the clip breakpoints. An ascent ray
// with no remaining curvature certifies an unbounded dual, i.e. primal
// infeasibility; that is the false return.
inline bool so_dual_newton(const MatrixXd& a_mat, const VectorXd& b, double lo, double hi,
                           VectorXd& a_out, VectorXd& lambda_out) {
  int k = static_cast<int>(a_mat.rows());
  int m = static_cast<int>(a_mat.cols());
  VectorXd lambda = VectorXd::Zero(k);
  double tol = 1e-11;
  for (int it = 0; it < 400; ++it) {
    VectorXd raw = a_mat.transpose() * lambda / 2.0;
    VectorXd a = clip_vec(raw, lo, hi);
    VectorXd grad = b - a_mat * a;
    if (grad.cwiseAbs().maxCoeff() <= tol) {
      a_out = a;
      lambda_out = lambda;
      return true;
    }

    // curvature over the unclipped coordinates
    MatrixXd h = MatrixXd::Zero(k, k);
    for (int i = 0; i < m; ++i)
      if (raw(i) > lo && raw(i) < hi) h += 0.5 * a_mat.col(i) * a_mat.col(i).transpose();
    VectorXd d = (h + 1e-10 * (1.0 + h.trace()) * MatrixXd::Identity(k, k)).ldlt().solve(grad);
    if (!d.allFinite() || d.dot(grad) <= 0.0 || d.norm() > 1e8 * (1.0 + grad.norm()))
      d = grad;

    // exact maximization along d: the directional derivative is continuous,
    // piecewise linear and non-increasing in the step length
    VectorXd u = a_mat.transpose() * d / 2.0;
    auto dphi = [&](double alpha) {
      return d.dot(b - a_mat * clip_vec(raw + alpha * u, lo, hi));
    };
    std::vector<double> bps;
    for (int i = 0; i < m; ++i) {
      if (std::abs(u(i)) < 1e-300) continue;
      for (double bound : {lo, hi}) {
        double alpha = (bound - raw(i)) / u(i);
        if (alpha > 1e-15) bps.push_back(alpha);
      }
    }
    std::sort(bps.begin(), bps.end());

    double prev_alpha = 0.0, prev_p = dphi(0.0);
    double alpha_star = -1.0;
    for (double bp : bps) {
      double p = dphi(bp);
      if (p <= 0.0) {
        alpha_star = prev_alpha + prev_p * (bp - prev_alpha) / (prev_p - p);
        break;
      }
      prev_alpha = bp;
      prev_p = p;
    }
    if (alpha_star < 0.0) {
      double slope = dphi(prev_alpha + 1.0) - prev_p;  // linear past the last breakpoint
      if (slope >= -1e-18) return false;  // unbounded ascent ray: infeasible
      alpha_star = prev_alpha - prev_p / slope;
    }
    lambda += alpha_star * d;
    if (!lambda.allFinite()) return false;
  }
  VectorXd a = clip_vec(a_mat.transpose() * lambda / 2.0, lo, hi);
  a_out = a;
  lambda_out = lambda;
  return (b - a_mat * a).cwiseAbs().maxCoeff() <= 1e-8;
}

// Primal active-set solve of min ||A a - b||^2 + eps ||a||^2 over the box.
// Strictly convex; terminates finitely. Used only on infeasible frames.
inline VectorXd so_box_least_squares(const MatrixXd& a_mat, const VectorXd& b, double lo,
                                     double hi) {
  int m = static_cast<int>(a_mat.cols());
  double eps = 1e-9;
  MatrixXd h = 2.0 * (a_mat.transpose() * a_mat + eps * MatrixXd::Identity(m, m));
  VectorXd f = -2.0 * a_mat.transpose() * b;
  VectorXd a = VectorXd::Constant(m, 0.5 * (lo + hi));
  // -1 free, 0 at lower, 1 at upper
  std::vector<int> state(m, -1);

  for (int outer = 0; outer < 20 * m + 50; ++outer) {
    VectorXd g = h * a + f;
    std::vector<int> free;
    for (int i = 0; i < m; ++i)
      if (state[i] == -1) free.push_back(i);

    VectorXd d = VectorXd::Zero(m);
    if (!free.empty()) {
      int nf = static_cast<int>(free.size());
      MatrixXd hff(nf, nf);
      VectorXd gf(nf);
      for (int r = 0; r < nf; ++r) {
        gf(r) = g(free[r]);
        for (int c = 0; c < nf; ++c) hff(r, c) = h(free[r], free[c]);
      }
      VectorXd df = hff.ldlt().solve(-gf);
      for (int r = 0; r < nf; ++r) d(free[r]) = df(r);
    }

    if (d.cwiseAbs().maxCoeff() < 1e-12) {
      // candidate optimum on the working set: check bound multipliers
      int release = -1;
      double worst = 1e-10;
      for (int i = 0; i < m; ++i) {
        if (state[i] == 0 && -g(i) > worst) {  // wants to increase
          worst = -g(i);
          release = i;
        } else if (state[i] == 1 && g(i) > worst) {  // wants to decrease
          worst = g(i);
          release = i;
        }
      }
      if (release < 0) return a;
      state[release] = -1;
      continue;
    }

    // longest feasible step along d
    double alpha = 1.0;
    int blocker = -1, blocker_state = 0;
    for (int i = 0; i < m; ++i) {
      if (d(i) > 1e-15) {
        double room = (hi - a(i)) / d(i);
        if (room < alpha) {
          alpha = room;
          blocker = i;
          blocker_state = 1;
        }
      } else if (d(i) < -1e-15) {
        double room = (lo - a(i)) / d(i);
        if (room < alpha) {
          alpha = room;
          blocker = i;
          blocker_state = 0;
        }
      }
    }
    a += alpha * d;
    if (blocker >= 0) {
      a(blocker) = blocker_state == 1 ? hi : lo;
      state[blocker] = blocker_state;
    }
  }
  return clip_vec(a, lo, hi);
}

}  // namespace detail

inline SoResult so_solve_frame(const MatrixXd& gains, const VectorXd& target, double lo = 0.01,
                               double hi = 1.0) {
  require(gains.rows() == target.size(), "so: gains/target mismatch");
  require(gains.cols() >= 1, "so: no muscles");
  require(lo < hi, "so: bounds must satisfy lo < hi");
  require(gains.allFinite() && target.allFinite(), "so: non-finite inputs");

  SoResult out;
  VectorXd a, lambda;
  if (detail::so_dual_newton(gains, target, lo, hi, a, lambda)) {
    out.activations = a;
    out.lambda = lambda;
    out.feasible = true;
  } else {
    // lexicographic: minimal violation first, then minimal effort over the
    // achievable torque
    VectorXd stage1 = detail::so_box_least_squares(gains, target, lo, hi);
    VectorXd achievable = gains * stage1;
    if (detail::so_dual_newton(gains, achievable, lo, hi, a, lambda)) {
      out.activations = a;
      out.lambda = lambda;
    } else {
      out.activations = stage1;
      out.lambda = VectorXd::Zero(gains.rows());
    }
    out.feasible = false;
  }
  out.objective = out.activations.squaredNorm();
  out.equality_residual = (gains * out.activations - target).cwiseAbs().maxCoeff();
  out.kkt_residual =
      detail::so_kkt_residual(gains, out.feasible ? target : (gains * out.activations), lo, hi,
                              out.activations, out.lambda);
  return out;
}

// ---------------------------------------------------------------------------
// Whole-trajectory reference solve. Fiber-length memory chains f_v across
// frames, so this runs sequentially per trajectory.

struct SoTrajectoryResult {
  MatrixXd activations;  // T x M
  MatrixXd forces;       // T x M
  std::vector<bool> infeasible;
  int infeasible_count = 0;
};

inline SoTrajectoryResult so_trajectory(const LimbModel& model,
                                        const std::vector<MuscleParams>& params,
                                        const MuscleGeometry& geom, const JointTrajectory& traj,
                                        double lo = 0.01, double hi = 1.0) {
  require(traj.has_qd() && traj.has_qdd(), "so_trajectory: differentiate the trajectory first");
  int t = traj.frames();
  int m = geom.count();
  SoTrajectoryResult out;
  out.activations.resize(t, m);
  out.forces.resize(t, m);
  out.infeasible.assign(t, false);

  MatrixXd vbars = trajectory_vbars(params, geom, traj.q, traj.dt());
  for (int i = 0; i < t; ++i) {
    JointState s;
    s.q = traj.q.row(i);
    s.qdot = traj.qd.row(i);
    s.qddot = traj.qdd.row(i);
    FrameConstants fc = frame_constants(params, geom, s.q, vbars.row(i).transpose());
    Vector3d target = required_torques(model, s, traj.grf[i]) - fc.passive;
    SoResult r = so_solve_frame(fc.gains, target, lo, hi);
    out.activations.row(i) = r.activations.transpose();
    out.infeasible[i] = !r.feasible;
    if (!r.feasible) ++out.infeasible_count;

    VectorXd lmt = musculotendon_lengths(geom, s.q);
    for (int n = 0; n < m; ++n)
      out.forces(i, n) = muscle_force(params[n], r.activations(n), lmt(n), vbars(i, n));
  }
  return out;
}

}  // namespace msknet
