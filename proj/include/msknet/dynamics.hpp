#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "msknet/common.hpp"

// Planar 3-link limb (thigh, shank, foot) pinned at the hip, sagittal plane.
// World frame {W}: x forward, y up, hip at the origin. Joint angles are
// counterclockwise-positive; segment k's local frame sits at its proximal
// joint and carries angle theta_k = q_1 + ... + q_k. The distal joint of
// segment k lies at local (0, -length_k), so at q = 0 the limb hangs straight
// down. All closed-form terms (M, C, G, Jacobians) are assembled from exact
// analytic partials of this chain.

namespace msknet {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;

struct SegmentParams {
  double mass = 0.0;         // kg
  double inertia_com = 0.0;  // kg m^2 about the COM
  double length = 0.0;       // m, proximal joint to distal joint
  Vector2d com_offset = Vector2d::Zero();  // m, COM in the proximal joint frame

  void validate() const {
    require(mass >= 0.0 && std::isfinite(mass), "segment mass must be >= 0");
    require(inertia_com >= 0.0 && std::isfinite(inertia_com), "segment inertia must be >= 0");
    require(length > 0.0 && std::isfinite(length), "segment length must be > 0");
    require(com_offset.norm() <= length + 1e-12, "segment COM offset exceeds segment length");
  }
};

struct PlateTransform {
  double rotation = 0.0;  // rad, {P} axes expressed in {W}
  Vector2d translation = Vector2d::Zero();

  Matrix2d rotation_matrix() const {
    double c = std::cos(rotation), s = std::sin(rotation);
    Matrix2d r;
    r << c, -s, s, c;
    return r;
  }

  Vector2d apply(const Vector2d& p) const { return rotation_matrix() * p + translation; }
  Vector2d rotate(const Vector2d& v) const { return rotation_matrix() * v; }
  Vector2d to_plate(const Vector2d& p_world) const {
    return rotation_matrix().transpose() * (p_world - translation);
  }
};

struct LimbModel {
  std::array<SegmentParams, 3> segments;  // thigh, shank, foot
  double gravity = 9.81;                  // m/s^2, acting along -y
  PlateTransform plate_to_world;

  void validate() const {
    for (const auto& s : segments) s.validate();
    require(gravity >= 0.0 && std::isfinite(gravity), "gravity must be finite and >= 0");
    Matrix2d r = plate_to_world.rotation_matrix();
    require(std::abs(r.determinant() - 1.0) < 1e-12, "plate rotation must be proper orthonormal");
  }
};

struct JointState {
  Vector3d q = Vector3d::Zero();      // rad
  Vector3d qdot = Vector3d::Zero();   // rad/s
  Vector3d qddot = Vector3d::Zero();  // rad/s^2

  void validate() const {
    require(q.allFinite() && qdot.allFinite() && qddot.allFinite(), "joint state must be finite");
  }
};

struct GrfSample {
  Vector2d force_plate = Vector2d::Zero();  // N, expressed in {P}
  Vector2d cop_plate = Vector2d::Zero();    // m, expressed in {P}
  bool in_contact = false;
};

struct ComKinematics {
  std::array<Vector2d, 3> com_pos;   // world, m
  std::array<Vector2d, 3> com_vel;   // world, m/s
  Vector3d seg_angle;                // rad, cumulative
  Vector3d seg_rate;                 // rad/s, cumulative
  std::array<Vector2d, 4> joint_pos; // hip, knee, ankle, foot tip
};

namespace detail {

inline Vector2d rot(double th, const Vector2d& v) {
  double c = std::cos(th), s = std::sin(th);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

// d/dth of rot(th, v)
inline Vector2d drot(double th, const Vector2d& v) {
  double c = std::cos(th), s = std::sin(th);
  return {-s * v.x() - c * v.y(), c * v.x() - s * v.y()};
}

inline Vector3d cumulative_angles(const Vector3d& q) {
  return {q(0), q(0) + q(1), q(0) + q(1) + q(2)};
}

// 2x3 Jacobian of a point rigidly attached to segment `seg` (0-based) at local
// coordinates `local`, mapping qdot to the point's world velocity.
inline Eigen::Matrix<double, 2, 3> point_jacobian(const LimbModel& model, const Vector3d& q,
                                                  int seg, const Vector2d& local) {
  Vector3d th = cumulative_angles(q);
  Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
  for (int i = 0; i <= seg; ++i) {
    Vector2d col = Vector2d::Zero();
    for (int m = i; m < seg; ++m) {
      col += model.segments[m].length * Vector2d(std::cos(th(m)), std::sin(th(m)));
    }
    col += drot(th(seg), local);
    jac.col(i) = col;
  }
  return jac;
}

// d(point_jacobian)/dq_r, analytic
inline Eigen::Matrix<double, 2, 3> point_jacobian_partial(const LimbModel& model, const Vector3d& q,
                                                          int seg, const Vector2d& local, int r) {
  Vector3d th = cumulative_angles(q);
  Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
  if (r > seg) return jac;
  for (int i = 0; i <= seg; ++i) {
    Vector2d col = Vector2d::Zero();
    for (int m = std::max(i, r); m < seg; ++m) {
      col += model.segments[m].length * Vector2d(-std::sin(th(m)), std::cos(th(m)));
    }
    // d/dq_r of drot(th_seg, local) = -rot(th_seg, local) for r <= seg
    col -= rot(th(seg), local);
    jac.col(i) = col;
  }
  return jac;
}

}  // namespace detail

inline ComKinematics com_kinematics(const LimbModel& model, const JointState& state) {
  ComKinematics out;
  Vector3d th = detail::cumulative_angles(state.q);
  out.seg_angle = th;
  out.seg_rate = {state.qdot(0), state.qdot(0) + state.qdot(1),
                  state.qdot(0) + state.qdot(1) + state.qdot(2)};
  Vector2d joint = Vector2d::Zero();
  for (int k = 0; k < 3; ++k) {
    out.joint_pos[k] = joint;
    out.com_pos[k] = joint + detail::rot(th(k), model.segments[k].com_offset);
    out.com_vel[k] =
        detail::point_jacobian(model, state.q, k, model.segments[k].com_offset) * state.qdot;
    joint += model.segments[k].length * Vector2d(std::sin(th(k)), -std::cos(th(k)));
  }
  out.joint_pos[3] = joint;
  return out;
}

inline double kinetic_energy(const LimbModel& model, const JointState& state) {
  ComKinematics kin = com_kinematics(model, state);
  double e = 0.0;
  for (int k = 0; k < 3; ++k) {
    e += 0.5 * model.segments[k].mass * kin.com_vel[k].squaredNorm();
    e += 0.5 * model.segments[k].inertia_com * kin.seg_rate(k) * kin.seg_rate(k);
  }
  return e;
}

inline double potential_energy(const LimbModel& model, const Vector3d& q) {
  JointState s;
  s.q = q;
  ComKinematics kin = com_kinematics(model, s);
  double v = 0.0;
  for (int k = 0; k < 3; ++k) v += model.segments[k].mass * model.gravity * kin.com_pos[k].y();
  return v;
}

inline Matrix3d mass_matrix(const LimbModel& model, const Vector3d& q) {
  Matrix3d m = Matrix3d::Zero();
  for (int k = 0; k < 3; ++k) {
    auto jac = detail::point_jacobian(model, q, k, model.segments[k].com_offset);
    m += model.segments[k].mass * jac.transpose() * jac;
    // rotational part: J_w for segment k is ones in columns 0..k
    for (int i = 0; i <= k; ++i)
      for (int j = 0; j <= k; ++j) m(i, j) += model.segments[k].inertia_com;
  }
  return m;
}

// dM/dq_r for r = 0,1,2
inline std::array<Matrix3d, 3> mass_matrix_partials(const LimbModel& model, const Vector3d& q) {
  std::array<Matrix3d, 3> dm;
  for (auto& m : dm) m.setZero();
  for (int k = 0; k < 3; ++k) {
    auto jac = detail::point_jacobian(model, q, k, model.segments[k].com_offset);
    for (int r = 0; r < 3; ++r) {
      auto djac = detail::point_jacobian_partial(model, q, k, model.segments[k].com_offset, r);
      Matrix3d term = jac.transpose() * djac;
      dm[r] += model.segments[k].mass * (term + term.transpose());
    }
  }
  return dm;
}

// Christoffel symbols of the first kind contracted with qdot.
inline Matrix3d coriolis_matrix(const LimbModel& model, const JointState& state) {
  auto dm = mass_matrix_partials(model, state.q);
  Matrix3d c = Matrix3d::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int r = 0; r < 3; ++r) {
        double gamma = 0.5 * (dm[r](i, j) + dm[j](i, r) - dm[i](j, r));
        c(i, j) += gamma * state.qdot(r);
      }
  return c;
}

inline Vector3d gravity_vector(const LimbModel& model, const Vector3d& q) {
  Vector3d g = Vector3d::Zero();
  for (int k = 0; k < 3; ++k) {
    auto jac = detail::point_jacobian(model, q, k, model.segments[k].com_offset);
    for (int i = 0; i < 3; ++i) g(i) += model.segments[k].mass * model.gravity * jac(1, i);
  }
  return g;
}

inline Vector2d cop_to_world(const LimbModel& model, const GrfSample& grf) {
  require(grf.in_contact, "cop_to_world: no COP exists during swing");
  return model.plate_to_world.apply(grf.cop_plate);
}

// Jacobian of the material point of the foot currently coincident with the
// world-frame COP (rigid-foot assumption: the point is fixed in the foot frame
// for the duration of the frame).
inline Eigen::Matrix<double, 2, 3> contact_point_jacobian(const LimbModel& model, const Vector3d& q,
                                                          const Vector2d& cop_world) {
  JointState s;
  s.q = q;
  ComKinematics kin = com_kinematics(model, s);
  Vector3d th = detail::cumulative_angles(q);
  Vector2d local = detail::rot(-th(2), cop_world - kin.joint_pos[2]);
  return detail::point_jacobian(model, q, 2, local);
}

inline Vector3d grf_torques(const LimbModel& model, const JointState& state, const GrfSample& grf) {
  require(grf.in_contact, "grf_torques: no GRF torque during swing");
  Vector2d force_world = model.plate_to_world.rotate(grf.force_plate);
  Vector2d cop_world = cop_to_world(model, grf);
  return contact_point_jacobian(model, state.q, cop_world).transpose() * force_world;
}

// Inverse dynamics: the total actuation torque consistent with the motion.
// Swing: tau = M qdd + C qd + G. Stance: the GRF contribution is subtracted.
inline Vector3d required_torques(const LimbModel& model, const JointState& state,
                                 const GrfSample& grf) {
  Vector3d tau = mass_matrix(model, state.q) * state.qddot +
                 coriolis_matrix(model, state) * state.qdot + gravity_vector(model, state.q);
  if (grf.in_contact) tau -= grf_torques(model, state, grf);
  return tau;
}

namespace detail {

inline Matrix3d checked_mass_inverse_solve(const Matrix3d& m, bool* ok = nullptr) {
  Eigen::SelfAdjointEigenSolver<Matrix3d> es(m);
  double lo = es.eigenvalues().minCoeff();
  double hi = es.eigenvalues().maxCoeff();
  bool good = lo > 0.0 && hi / lo < 1e12;
  if (ok) {
    *ok = good;
  } else {
    require(good, "mass matrix is singular or ill-conditioned (cond > 1e12)");
  }
  if (!good) return Matrix3d::Zero();
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

inline Vector3d forward_acceleration(const LimbModel& model, const Vector3d& q,
                                     const Vector3d& qdot, const Vector3d& tau_total) {
  JointState s;
  s.q = q;
  s.qdot = qdot;
  Matrix3d minv = detail::checked_mass_inverse_solve(mass_matrix(model, q));
  return minv * (tau_total - coriolis_matrix(model, s) * qdot - gravity_vector(model, q));
}

// One classic RK4 step under constant applied torque. If the sample is in
// contact, the GRF acts on the foot material point fixed at the step's initial
// COP; its torque is re-evaluated at each stage configuration.
inline JointState forward_step(const LimbModel& model, const JointState& state,
                               const Vector3d& tau, const GrfSample& grf, double dt) {
  require(dt > 0.0, "forward_step: dt must be > 0");
  Vector2d force_world = Vector2d::Zero();
  Vector2d local = Vector2d::Zero();
  if (grf.in_contact) {
    force_world = model.plate_to_world.rotate(grf.force_plate);
    Vector2d cop_world = cop_to_world(model, grf);
    JointState s0;
    s0.q = state.q;
    ComKinematics kin = com_kinematics(model, s0);
    Vector3d th = detail::cumulative_angles(state.q);
    local = detail::rot(-th(2), cop_world - kin.joint_pos[2]);
  }

  auto accel = [&](const Vector3d& q, const Vector3d& qdot) -> Vector3d {
    Vector3d tau_total = tau;
    if (grf.in_contact)
      tau_total += detail::point_jacobian(model, q, 2, local).transpose() * force_world;
    return forward_acceleration(model, q, qdot, tau_total);
  };

  Vector3d q = state.q, v = state.qdot;
  Vector3d k1q = v, k1v = accel(q, v);
  Vector3d k2q = v + 0.5 * dt * k1v, k2v = accel(q + 0.5 * dt * k1q, v + 0.5 * dt * k1v);
  Vector3d k3q = v + 0.5 * dt * k2v, k3v = accel(q + 0.5 * dt * k2q, v + 0.5 * dt * k2v);
  Vector3d k4q = v + dt * k3v, k4v = accel(q + dt * k3q, v + dt * k3v);

  JointState next;
  next.q = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
  next.qdot = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  next.qddot = accel(next.q, next.qdot);
  return next;
}

// ---------------------------------------------------------------------------
// Limb config file: key = value sections [thigh] [shank] [foot] [plate],
// top-level (or [world]) gravity. '#' and ';' start comments.

inline LimbModel parse_limb_config(std::istream& in) {
  std::map<std::string, std::map<std::string, double>> sections;
  std::string section = "world";
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cut = line.find_first_of("#;");
    if (cut != std::string::npos) line = line.substr(0, cut);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    if (line.front() == '[') {
      require(line.back() == ']', "limb config: malformed section at line " + std::to_string(lineno));
      section = line.substr(1, line.size() - 2);
      continue;
    }
    auto eq = line.find('=');
    require(eq != std::string::npos, "limb config: expected key = value at line " + std::to_string(lineno));
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string val = line.substr(eq + 1);
    val.erase(0, val.find_first_not_of(" \t"));
    try {
      sections[section][key] = std::stod(val);
    } catch (const std::exception&) {
      throw Error("limb config: bad number '" + val + "' at line " + std::to_string(lineno));
    }
  }

  auto get = [&](const std::string& sec, const std::string& key) -> double {
    auto s = sections.find(sec);
    require(s != sections.end(), "limb config: missing section [" + sec + "]");
    auto k = s->second.find(key);
    require(k != s->second.end(), "limb config: missing key '" + key + "' in [" + sec + "]");
    return k->second;
  };

  LimbModel model;
  const char* names[3] = {"thigh", "shank", "foot"};
  for (int i = 0; i < 3; ++i) {
    model.segments[i].mass = get(names[i], "mass");
    model.segments[i].inertia_com = get(names[i], "inertia");
    model.segments[i].length = get(names[i], "length");
    model.segments[i].com_offset = {get(names[i], "com_x"), get(names[i], "com_y")};
  }
  if (sections.count("world") && sections["world"].count("gravity"))
    model.gravity = sections["world"]["gravity"];
  model.plate_to_world.rotation = get("plate", "rotation_rad");
  model.plate_to_world.translation = {get("plate", "tx"), get("plate", "ty")};
  model.validate();
  return model;
}

inline LimbModel load_limb_config(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open limb config: " + path);
  return parse_limb_config(f);
}

inline void write_limb_config(std::ostream& out, const LimbModel& model) {
  const char* names[3] = {"thigh", "shank", "foot"};
  out << "gravity = " << model.gravity << "\n\n";
  for (int i = 0; i < 3; ++i) {
    out << "[" << names[i] << "]\n";
    out << "mass = " << model.segments[i].mass << "\n";
    out << "inertia = " << model.segments[i].inertia_com << "\n";
    out << "length = " << model.segments[i].length << "\n";
    out << "com_x = " << model.segments[i].com_offset.x() << "\n";
    out << "com_y = " << model.segments[i].com_offset.y() << "\n\n";
  }
  out << "[plate]\n";
  out << "rotation_rad = " << model.plate_to_world.rotation << "\n";
  out << "tx = " << model.plate_to_world.translation.x() << "\n";
  out << "ty = " << model.plate_to_world.translation.y() << "\n";
}

}  // namespace msknet
