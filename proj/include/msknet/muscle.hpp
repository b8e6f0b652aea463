#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "msknet/common.hpp"

// Hill-type muscle with a rigid (inextensible) tendon. Musculotendon length is
// a per-muscle quadratic in the joint angles, so moment arms are affine in q
// and tendon force is affine in activation. That last property is what lets
// the physics loss precompute per-frame gain matrices.

namespace msknet {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

struct MuscleParams {
  std::string name;
  double f_max = 0.0;    // N, peak isometric force
  double l_opt = 0.0;    // m, optimal fiber length
  double phi_opt = 0.0;  // rad, pennation at optimal fiber length
  double l_slack = 0.0;  // m, tendon slack length
  double v_max = 10.0;   // optimal fiber lengths per second

  void validate() const {
    require(!name.empty(), "muscle needs a name");
    require(f_max > 0.0, name + ": f_max must be > 0");
    require(l_opt > 0.0, name + ": l_opt must be > 0");
    require(phi_opt >= 0.0 && phi_opt < M_PI / 2.0, name + ": phi_opt must be in [0, pi/2)");
    require(l_slack >= 0.0, name + ": l_slack must be >= 0");
    require(v_max > 0.0, name + ": v_max must be > 0");
  }
};

// Force-length / force-velocity shape curves, dimensionless. lbar = l^m/l_opt,
// vbar = fiber velocity / (v_max * l_opt), shortening negative.

inline double active_force_length(double lbar) {
  double d = lbar - 1.0;
  return std::exp(-d * d / 0.2025);
}

inline double passive_force_length(double lbar) {
  if (lbar <= 1.0) return 0.0;
  return (std::exp(4.0 * (lbar - 1.0) / 0.6) - 1.0) / (std::exp(4.0) - 1.0);
}

inline double force_velocity(double vbar) {
  if (vbar <= -1.0) return 0.0;
  if (vbar <= 0.0) return (1.0 + vbar) / (1.0 - vbar / 0.25);
  return (1.4 * vbar + 0.08) / (vbar + 0.08);
}

struct FiberGeometry {
  double fiber_length = 0.0;  // m
  double pennation = 0.0;     // rad
  bool floored = false;       // fiber clamped at 0.1 * l_opt
};

// Rigid tendon: the fiber absorbs all length change; constant-width pennation.
inline FiberGeometry fiber_geometry(const MuscleParams& p, double lmt) {
  double w = p.l_opt * std::sin(p.phi_opt);
  double along = lmt - p.l_slack;
  FiberGeometry out;
  double lm = std::sqrt(along * along + w * w);
  double floor = 0.1 * p.l_opt;
  if (lm < floor || along <= 0.0) {
    out.fiber_length = std::max(lm, floor);
    out.floored = true;
  } else {
    out.fiber_length = lm;
  }
  out.pennation = std::asin(std::min(1.0, w / out.fiber_length));
  return out;
}

// Tendon-direction force. Affine in activation by construction.
inline double muscle_force(const MuscleParams& p, double activation, double lmt, double vbar) {
  FiberGeometry g = fiber_geometry(p, lmt);
  double lbar = g.fiber_length / p.l_opt;
  double active = activation * active_force_length(lbar) * force_velocity(vbar);
  return p.f_max * (active + passive_force_length(lbar)) * std::cos(g.pennation);
}

// ---------------------------------------------------------------------------
// Musculotendon path geometry.
//
//   lmt_n(q) = c0_n - sum_j [ r0_nj * q_j + 0.5 * r1_nj * q_j^2 ]
//
// which makes the moment arm about joint j
//
//   R_nj(q) = -d lmt_n / d q_j = r0_nj + r1_nj * q_j
//
// Muscles that do not span a joint must carry zero coefficients there.

struct MuscleGeometry {
  std::vector<std::string> names;
  VectorXd c0;   // M
  MatrixXd r0;   // M x 3
  MatrixXd r1;   // M x 3

  int count() const { return static_cast<int>(names.size()); }

  void validate() const {
    require(c0.size() == count() && r0.rows() == count() && r1.rows() == count(),
            "muscle geometry: inconsistent sizes");
    require(r0.cols() == 3 && r1.cols() == 3, "muscle geometry: expected 3 joint columns");
    // A joint the muscle does not span must have both coefficients zero; a
    // linear term without a constant term is a data-entry error.
    for (int n = 0; n < count(); ++n)
      for (int j = 0; j < 3; ++j)
        require(r0(n, j) != 0.0 || r1(n, j) == 0.0,
                names[n] + ": linear moment-arm term without constant term");
  }
};

inline VectorXd musculotendon_lengths(const MuscleGeometry& g, const Vector3d& q) {
  VectorXd lmt(g.count());
  for (int n = 0; n < g.count(); ++n) {
    double l = g.c0(n);
    for (int j = 0; j < 3; ++j) l -= g.r0(n, j) * q(j) + 0.5 * g.r1(n, j) * q(j) * q(j);
    lmt(n) = l;
  }
  return lmt;
}

inline MatrixXd moment_arms(const MuscleGeometry& g, const Vector3d& q) {
  MatrixXd r(g.count(), 3);
  for (int n = 0; n < g.count(); ++n)
    for (int j = 0; j < 3; ++j) r(n, j) = g.r0(n, j) + g.r1(n, j) * q(j);
  return r;
}

// Check that every muscle keeps a taut, positive-length fiber across the
// rectangular motion range [lo, hi] (sampled on a grid; lmt is quadratic per
// joint so a modest grid is adequate).
inline void validate_geometry_over_range(const std::vector<MuscleParams>& params,
                                         const MuscleGeometry& g, const Vector3d& lo,
                                         const Vector3d& hi, int samples = 9) {
  require(static_cast<int>(params.size()) == g.count(), "muscle params/geometry count mismatch");
  for (int a = 0; a < samples; ++a)
    for (int b = 0; b < samples; ++b)
      for (int c = 0; c < samples; ++c) {
        Vector3d q;
        Vector3d t{a / double(samples - 1), b / double(samples - 1), c / double(samples - 1)};
        for (int j = 0; j < 3; ++j) q(j) = lo(j) + t(j) * (hi(j) - lo(j));
        VectorXd lmt = musculotendon_lengths(g, q);
        for (int n = 0; n < g.count(); ++n) {
          require(lmt(n) > params[n].l_slack,
                  params[n].name + ": tendon slack exceeds path length inside the motion range");
        }
      }
}

// Per-frame constants of the activation-to-torque map: tau = gains * a + passive.
struct FrameConstants {
  Eigen::Matrix<double, 3, Eigen::Dynamic> gains;  // 3 x M
  Vector3d passive = Vector3d::Zero();
};

// vbar holds the normalized fiber velocity per muscle for this frame (backward
// difference upstream; zero on the first frame).
inline FrameConstants frame_constants(const std::vector<MuscleParams>& params,
                                      const MuscleGeometry& g, const Vector3d& q,
                                      const VectorXd& vbar) {
  int m = g.count();
  require(static_cast<int>(params.size()) == m && vbar.size() == m,
          "frame_constants: size mismatch");
  VectorXd lmt = musculotendon_lengths(g, q);
  MatrixXd r = moment_arms(g, q);
  FrameConstants out;
  out.gains.resize(3, m);
  for (int n = 0; n < m; ++n) {
    FiberGeometry fg = fiber_geometry(params[n], lmt(n));
    double lbar = fg.fiber_length / params[n].l_opt;
    double cp = std::cos(fg.pennation);
    double gain = params[n].f_max * active_force_length(lbar) * force_velocity(vbar(n)) * cp;
    double pas = params[n].f_max * passive_force_length(lbar) * cp;
    for (int j = 0; j < 3; ++j) {
      out.gains(j, n) = r(n, j) * gain;
      out.passive(j) += r(n, j) * pas;
    }
  }
  return out;
}

inline Vector3d muscle_torques(const std::vector<MuscleParams>& params, const MuscleGeometry& g,
                               const Vector3d& q, const VectorXd& vbar, const VectorXd& a) {
  FrameConstants fc = frame_constants(params, g, q, vbar);
  return fc.gains * a + fc.passive;
}

// Normalized fiber velocities for a frame given the previous frame's fiber
// lengths. First frame: pass empty prev -> zeros.
inline VectorXd fiber_velocities(const std::vector<MuscleParams>& params, const MuscleGeometry& g,
                                 const Vector3d& q, const VectorXd& fiber_prev, double dt,
                                 VectorXd* fiber_out = nullptr) {
  int m = g.count();
  VectorXd lmt = musculotendon_lengths(g, q);
  VectorXd vbar = VectorXd::Zero(m);
  VectorXd fiber(m);
  for (int n = 0; n < m; ++n) {
    fiber(n) = fiber_geometry(params[n], lmt(n)).fiber_length;
    if (fiber_prev.size() == m)
      vbar(n) = (fiber(n) - fiber_prev(n)) / dt / (params[n].v_max * params[n].l_opt);
  }
  if (fiber_out) *fiber_out = fiber;
  return vbar;
}

// ---------------------------------------------------------------------------
// File formats.
//
// Muscle parameter CSV: header then one row per muscle,
//   name,f_max,l_opt,phi_opt,l_slack,v_max
// Geometry text: one line per muscle,
//   name c0 r0_hip r0_knee r0_ankle r1_hip r1_knee r1_ankle

inline std::vector<MuscleParams> parse_muscle_params(std::istream& in) {
  std::vector<MuscleParams> out;
  std::string line;
  bool header = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      require(line.rfind("name,", 0) == 0, "muscle csv: expected header starting with 'name,'");
      continue;
    }
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    require(cells.size() == 6, "muscle csv: expected 6 columns at line " + std::to_string(lineno));
    MuscleParams p;
    p.name = cells[0];
    try {
      p.f_max = std::stod(cells[1]);
      p.l_opt = std::stod(cells[2]);
      p.phi_opt = std::stod(cells[3]);
      p.l_slack = std::stod(cells[4]);
      p.v_max = std::stod(cells[5]);
    } catch (const std::exception&) {
      throw Error("muscle csv: bad number at line " + std::to_string(lineno));
    }
    p.validate();
    out.push_back(p);
  }
  require(!out.empty(), "muscle csv: no muscles");
  return out;
}

inline std::vector<MuscleParams> load_muscle_params(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open muscle csv: " + path);
  return parse_muscle_params(f);
}

inline void write_muscle_params(std::ostream& out, const std::vector<MuscleParams>& params) {
  out << "name,f_max,l_opt,phi_opt,l_slack,v_max\n";
  for (const auto& p : params)
    out << p.name << "," << p.f_max << "," << p.l_opt << "," << p.phi_opt << "," << p.l_slack
        << "," << p.v_max << "\n";
}

inline MuscleGeometry parse_muscle_geometry(std::istream& in) {
  MuscleGeometry g;
  std::vector<std::array<double, 7>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cut = line.find('#');
    if (cut != std::string::npos) line = line.substr(0, cut);
    std::istringstream ss(line);
    std::string name;
    if (!(ss >> name)) continue;
    std::array<double, 7> vals{};
    for (int i = 0; i < 7; ++i)
      require(static_cast<bool>(ss >> vals[i]),
              "muscle geometry: expected 7 numbers at line " + std::to_string(lineno));
    g.names.push_back(name);
    rows.push_back(vals);
  }
  require(!g.names.empty(), "muscle geometry: no muscles");
  int m = g.count();
  g.c0.resize(m);
  g.r0.resize(m, 3);
  g.r1.resize(m, 3);
  for (int n = 0; n < m; ++n) {
    g.c0(n) = rows[n][0];
    for (int j = 0; j < 3; ++j) {
      g.r0(n, j) = rows[n][1 + j];
      g.r1(n, j) = rows[n][4 + j];
    }
  }
  g.validate();
  return g;
}

inline MuscleGeometry load_muscle_geometry(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open muscle geometry: " + path);
  return parse_muscle_geometry(f);
}

inline void write_muscle_geometry(std::ostream& out, const MuscleGeometry& g) {
  out << "# name c0 r0_hip r0_knee r0_ankle r1_hip r1_knee r1_ankle\n";
  for (int n = 0; n < g.count(); ++n) {
    out << g.names[n] << " " << g.c0(n);
    for (int j = 0; j < 3; ++j) out << " " << g.r0(n, j);
    for (int j = 0; j < 3; ++j) out << " " << g.r1(n, j);
    out << "\n";
  }
}

}  // namespace msknet
