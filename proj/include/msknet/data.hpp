#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msknet/common.hpp"
#include "msknet/dynamics.hpp"

// Trajectory ingestion, discrete differentiation, sliding windows,
// normalization, splits, and evaluation metrics.

namespace msknet {

using Eigen::RowVectorXd;

struct JointTrajectory {
  VectorXd time;                // s, uniform grid
  MatrixXd q;                   // T x 3, rad
  MatrixXd qd, qdd;             // T x 3, empty until differentiated/ingested
  std::vector<GrfSample> grf;   // per frame
  std::string subject, condition;

  int frames() const { return static_cast<int>(time.size()); }
  bool has_qd() const { return qd.rows() == time.size() && qd.rows() > 0; }
  bool has_qdd() const { return qdd.rows() == time.size() && qdd.rows() > 0; }

  double dt() const {
    require(frames() >= 2, "trajectory: need at least 2 frames for dt");
    return time(1) - time(0);
  }

  void validate() const {
    require(frames() >= 2, "trajectory: too short");
    require(q.rows() == time.size() && q.cols() == 3, "trajectory: q must be T x 3");
    require(static_cast<Eigen::Index>(grf.size()) == time.size(),
            "trajectory: grf must align with frames");
    double step = dt();
    require(step > 0.0, "trajectory: time must increase");
    for (int t = 1; t < frames(); ++t)
      require(std::abs((time(t) - time(t - 1)) - step) < 1e-9,
              "trajectory: non-uniform time grid at frame " + std::to_string(t));
  }
};

// Central differences in the interior, one-sided second-order at the ends.
inline MatrixXd differentiate_columns(const MatrixXd& x, double dt) {
  int t = static_cast<int>(x.rows());
  require(t >= 3, "differentiate: need at least 3 frames");
  MatrixXd d(t, x.cols());
  d.row(0) = (-3.0 * x.row(0) + 4.0 * x.row(1) - x.row(2)) / (2.0 * dt);
  for (int i = 1; i + 1 < t; ++i) d.row(i) = (x.row(i + 1) - x.row(i - 1)) / (2.0 * dt);
  d.row(t - 1) = (3.0 * x.row(t - 1) - 4.0 * x.row(t - 2) + x.row(t - 3)) / (2.0 * dt);
  return d;
}

// Missing derivatives are derived, provided ones are kept.
inline void differentiate(JointTrajectory& traj) {
  double step = traj.dt();
  if (!traj.has_qd()) traj.qd = differentiate_columns(traj.q, step);
  if (!traj.has_qdd()) traj.qdd = differentiate_columns(traj.qd, step);
}

// Network feature layout: per joint (angle, velocity, acceleration),
// joint-major -> 9 columns.
inline MatrixXd feature_matrix(const JointTrajectory& traj) {
  require(traj.has_qd() && traj.has_qdd(), "feature_matrix: differentiate first");
  MatrixXd f(traj.frames(), 9);
  for (int j = 0; j < 3; ++j) {
    f.col(3 * j + 0) = traj.q.col(j);
    f.col(3 * j + 1) = traj.qd.col(j);
    f.col(3 * j + 2) = traj.qdd.col(j);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Sliding windows. A window of length `window` ending at frame e covers
// frames [e-window+1, e]; the window's prediction is assigned to frame e.

inline std::vector<int> window_end_frames(int frames, int window, int stride) {
  require(window >= 1 && stride >= 1, "windows: window and stride must be >= 1");
  require(frames >= window, "windows: trajectory shorter than one window");
  std::vector<int> ends;
  for (int start = 0; start + window <= frames; start += stride)
    ends.push_back(start + window - 1);
  return ends;
}

// ---------------------------------------------------------------------------
// Per-channel z-score normalization, statistics from the training split only.

struct NormStats {
  RowVectorXd mean, stddev;
  bool any_zero_variance = false;

  void validate() const {
    require(mean.size() == stddev.size() && mean.size() > 0, "norm stats: empty");
    require((stddev.array() > 0.0).all(), "norm stats: nonpositive divisor");
  }
};

inline NormStats compute_norm_stats(const MatrixXd& rows) {
  require(rows.rows() >= 2, "norm stats: need at least 2 rows");
  NormStats s;
  s.mean = rows.colwise().mean();
  RowVectorXd var = (rows.rowwise() - s.mean).array().square().colwise().sum() /
                    double(rows.rows());
  s.stddev = var.array().sqrt();
  for (Eigen::Index c = 0; c < s.stddev.size(); ++c) {
    if (s.stddev(c) < 1e-12) {
      warn("normalization: channel " + std::to_string(c) + " has zero variance, using 1");
      s.stddev(c) = 1.0;
      s.any_zero_variance = true;
    }
  }
  return s;
}

inline MatrixXd normalize(const NormStats& s, MatrixXd rows) {
  require(rows.cols() == s.mean.size(), "normalize: channel count mismatch");
  rows.rowwise() -= s.mean;
  rows.array().rowwise() /= s.stddev.array();
  return rows;
}

inline MatrixXd denormalize(const NormStats& s, MatrixXd rows) {
  require(rows.cols() == s.mean.size(), "denormalize: channel count mismatch");
  rows.array().rowwise() *= s.stddev.array();
  rows.rowwise() += s.mean;
  return rows;
}

// ---------------------------------------------------------------------------
// Dataset splits over (trial, window-end) pairs.

struct WindowRef {
  int trial = 0;
  int end_frame = 0;
  bool operator==(const WindowRef&) const = default;
};

enum class SplitMode { intra, loso_condition };

struct SplitResult {
  std::vector<WindowRef> train, test;
};

inline SplitMode parse_split_mode(const std::string& s) {
  if (s == "intra") return SplitMode::intra;
  if (s == "loso_condition") return SplitMode::loso_condition;
  throw Error("unknown split mode: " + s);
}

// conditions: one tag per trial, aligned with the outer index of `windows`.
inline SplitResult split_windows(SplitMode mode, const std::vector<std::vector<int>>& windows,
                                 const std::vector<std::string>& conditions,
                                 const std::string& holdout, uint64_t seed,
                                 double train_fraction = 0.8) {
  require(windows.size() == conditions.size(), "split: trials/conditions mismatch");
  std::vector<WindowRef> all;
  for (size_t t = 0; t < windows.size(); ++t)
    for (int e : windows[t]) all.push_back({static_cast<int>(t), e});
  require(!all.empty(), "split: no windows");

  SplitResult out;
  if (mode == SplitMode::intra) {
    Rng rng(derive_seed(seed, 0x5b117));
    rng.shuffle(all);
    size_t n_train = static_cast<size_t>(std::llround(train_fraction * double(all.size())));
    n_train = std::min(n_train, all.size());
    out.train.assign(all.begin(), all.begin() + n_train);
    out.test.assign(all.begin() + n_train, all.end());
  } else {
    bool saw_holdout = false;
    for (const auto& w : all) {
      if (conditions[w.trial] == holdout) {
        out.test.push_back(w);
        saw_holdout = true;
      } else {
        out.train.push_back(w);
      }
    }
    require(saw_holdout, "split: held-out condition '" + holdout + "' not present");
  }
  require(!out.train.empty() && !out.test.empty(), "split: one side is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Metrics.

struct MetricValue {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
};

inline MetricValue r_squared(const VectorXd& actual, const VectorXd& predicted) {
  require(actual.size() == predicted.size(), "r_squared: length mismatch");
  require(actual.size() >= 2, "r_squared: need at least 2 samples");
  double mean = actual.mean();
  double sst = (actual.array() - mean).square().sum();
  MetricValue m;
  if (sst <= 0.0) return m;  // constant reference: undefined
  double sse = (actual - predicted).squaredNorm();
  m.value = 1.0 - sse / sst;
  m.defined = true;
  return m;
}

inline MetricValue nrmse(const VectorXd& actual, const VectorXd& predicted) {
  require(actual.size() == predicted.size(), "nrmse: length mismatch");
  require(actual.size() >= 1, "nrmse: empty");
  double range = actual.maxCoeff() - actual.minCoeff();
  MetricValue m;
  if (range <= 0.0) return m;
  double rmse = std::sqrt((actual - predicted).squaredNorm() / double(actual.size()));
  m.value = rmse / range;
  m.defined = true;
  return m;
}

struct Aggregate {
  double mean = 0.0, sd = 0.0;
  int n = 0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.n = static_cast<int>(values.size());
  if (a.n == 0) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / a.n;
  if (a.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.sd = std::sqrt(ss / (a.n - 1));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Trajectory CSV. Leading `# key=value` comment lines carry metadata
// (subject, condition, degrees). Mandatory header row; optional qd_*/qdd_*
// column groups; trailing columns grf_fx, grf_fy, cop_x, cop_y, contact.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace detail

inline JointTrajectory parse_trajectory_csv(std::istream& in) {
  JointTrajectory traj;
  bool degrees = false;
  std::string line;
  std::vector<std::string> header;
  int lineno = 0;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq != std::string::npos) {
        std::string key = line.substr(1, eq - 1);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string s) {
          s.erase(0, s.find_first_not_of(" \t"));
          s.erase(s.find_last_not_of(" \t") + 1);
          return s;
        };
        key = trim(key);
        val = trim(val);
        if (key == "subject") traj.subject = val;
        else if (key == "condition") traj.condition = val;
        else if (key == "degrees") degrees = (val == "true" || val == "1");
      }
      continue;
    }
    header = detail::split_csv_line(line);
    break;
  }
  require(!header.empty(), "trajectory csv: missing header row");

  std::map<std::string, int> col;
  for (size_t i = 0; i < header.size(); ++i) col[header[i]] = static_cast<int>(i);
  auto need = [&](const std::string& name) {
    require(col.count(name) > 0, "trajectory csv: missing column '" + name + "'");
    return col[name];
  };
  int c_time = need("time");
  int c_q[3] = {need("q_hip"), need("q_knee"), need("q_ankle")};
  bool with_qd = col.count("qd_hip") > 0;
  bool with_qdd = col.count("qdd_hip") > 0;
  int c_qd[3] = {0, 0, 0}, c_qdd[3] = {0, 0, 0};
  if (with_qd) {
    c_qd[0] = need("qd_hip"); c_qd[1] = need("qd_knee"); c_qd[2] = need("qd_ankle");
  }
  if (with_qdd) {
    c_qdd[0] = need("qdd_hip"); c_qdd[1] = need("qdd_knee"); c_qdd[2] = need("qdd_ankle");
  }
  int c_fx = need("grf_fx"), c_fy = need("grf_fy");
  int c_cx = need("cop_x"), c_cy = need("cop_y"), c_ct = need("contact");

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv_line(line);
    require(cells.size() == header.size(),
            "trajectory csv: wrong column count at line " + std::to_string(lineno));
    std::vector<double> vals(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) {
      try {
        vals[i] = std::stod(cells[i]);
      } catch (const std::exception&) {
        throw Error("trajectory csv: bad number at line " + std::to_string(lineno));
      }
    }
    rows.push_back(std::move(vals));
  }
  int t = static_cast<int>(rows.size());
  require(t >= 2, "trajectory csv: need at least 2 data rows");

  double to_rad = degrees ? M_PI / 180.0 : 1.0;
  traj.time.resize(t);
  traj.q.resize(t, 3);
  if (with_qd) traj.qd.resize(t, 3);
  if (with_qdd) traj.qdd.resize(t, 3);
  traj.grf.resize(t);
  for (int i = 0; i < t; ++i) {
    traj.time(i) = rows[i][c_time];
    for (int j = 0; j < 3; ++j) {
      traj.q(i, j) = rows[i][c_q[j]] * to_rad;
      if (with_qd) traj.qd(i, j) = rows[i][c_qd[j]] * to_rad;
      if (with_qdd) traj.qdd(i, j) = rows[i][c_qdd[j]] * to_rad;
    }
    traj.grf[i].force_plate = {rows[i][c_fx], rows[i][c_fy]};
    traj.grf[i].cop_plate = {rows[i][c_cx], rows[i][c_cy]};
    traj.grf[i].in_contact = rows[i][c_ct] != 0.0;
  }
  traj.validate();
  return traj;
}

inline JointTrajectory load_trajectory_csv(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open trajectory csv: " + path);
  return parse_trajectory_csv(f);
}

inline void write_trajectory_csv(std::ostream& out, const JointTrajectory& traj,
                                 bool with_derivatives = true) {
  out.precision(17);
  if (!traj.subject.empty()) out << "# subject=" << traj.subject << "\n";
  if (!traj.condition.empty()) out << "# condition=" << traj.condition << "\n";
  out << "time,q_hip,q_knee,q_ankle";
  bool qd = with_derivatives && traj.has_qd();
  bool qdd = with_derivatives && traj.has_qdd();
  if (qd) out << ",qd_hip,qd_knee,qd_ankle";
  if (qdd) out << ",qdd_hip,qdd_knee,qdd_ankle";
  out << ",grf_fx,grf_fy,cop_x,cop_y,contact\n";
  for (int i = 0; i < traj.frames(); ++i) {
    out << traj.time(i);
    for (int j = 0; j < 3; ++j) out << "," << traj.q(i, j);
    if (qd)
      for (int j = 0; j < 3; ++j) out << "," << traj.qd(i, j);
    if (qdd)
      for (int j = 0; j < 3; ++j) out << "," << traj.qdd(i, j);
    const GrfSample& g = traj.grf[i];
    out << "," << g.force_plate.x() << "," << g.force_plate.y() << "," << g.cop_plate.x()
        << "," << g.cop_plate.y() << "," << (g.in_contact ? 1 : 0) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Reference labels CSV: time, a_<muscle>... then f_<muscle>...

struct LabelSet {
  VectorXd time;
  MatrixXd activations;  // T x M
  MatrixXd forces;       // T x M, N
  std::vector<std::string> muscle_names;

  int frames() const { return static_cast<int>(time.size()); }

  void validate() const {
    int m = static_cast<int>(muscle_names.size());
    require(m > 0, "labels: no muscles");
    require(activations.rows() == time.size() && activations.cols() == m,
            "labels: activation shape mismatch");
    require(forces.rows() == time.size() && forces.cols() == m, "labels: force shape mismatch");
  }
};

inline LabelSet parse_labels_csv(std::istream& in) {
  LabelSet ls;
  std::string line;
  std::vector<std::string> header;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    header = detail::split_csv_line(line);
    break;
  }
  require(header.size() >= 3 && header[0] == "time", "labels csv: bad header");
  int m = static_cast<int>((header.size() - 1) / 2);
  require(header.size() == static_cast<size_t>(1 + 2 * m), "labels csv: need a_ and f_ pairs");
  for (int i = 0; i < m; ++i) {
    require(header[1 + i].rfind("a_", 0) == 0, "labels csv: expected a_<muscle> columns");
    require(header[1 + m + i] == "f_" + header[1 + i].substr(2),
            "labels csv: force columns must mirror activation columns");
    ls.muscle_names.push_back(header[1 + i].substr(2));
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv_line(line);
    require(cells.size() == header.size(),
            "labels csv: wrong column count at line " + std::to_string(lineno));
    std::vector<double> vals(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) {
      try {
        vals[i] = std::stod(cells[i]);
      } catch (const std::exception&) {
        throw Error("labels csv: bad number at line " + std::to_string(lineno));
      }
    }
    rows.push_back(std::move(vals));
  }
  int t = static_cast<int>(rows.size());
  require(t >= 1, "labels csv: no data rows");
  ls.time.resize(t);
  ls.activations.resize(t, m);
  ls.forces.resize(t, m);
  for (int i = 0; i < t; ++i) {
    ls.time(i) = rows[i][0];
    for (int j = 0; j < m; ++j) {
      ls.activations(i, j) = rows[i][1 + j];
      ls.forces(i, j) = rows[i][1 + m + j];
    }
  }
  ls.validate();
  return ls;
}

inline LabelSet load_labels_csv(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open labels csv: " + path);
  return parse_labels_csv(f);
}

inline void write_labels_csv(std::ostream& out, const LabelSet& ls) {
  out.precision(17);
  out << "time";
  for (const auto& n : ls.muscle_names) out << ",a_" << n;
  for (const auto& n : ls.muscle_names) out << ",f_" << n;
  out << "\n";
  for (int i = 0; i < ls.frames(); ++i) {
    out << ls.time(i);
    for (int j = 0; j < ls.activations.cols(); ++j) out << "," << ls.activations(i, j);
    for (int j = 0; j < ls.forces.cols(); ++j) out << "," << ls.forces(i, j);
    out << "\n";
  }
}

}  // namespace msknet
