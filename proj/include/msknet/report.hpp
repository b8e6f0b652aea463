#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "msknet/common.hpp"
#include "msknet/data.hpp"

// Plain SVG 1.1 reporting, no plotting dependency: per-muscle trace panels
// (reference vs prediction over time) and metric bar charts with sd whiskers.
// Traces are grouped by trial when trial ids are supplied, so interleaved
// held-out windows from several recordings draw as separate lines.

namespace msknet {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

// data-to-pixel map; px0/px1 may be descending (SVG y grows downward)
struct SvgScale {
  double lo = 0.0, hi = 1.0, px0 = 0.0, px1 = 1.0;
  double operator()(double v) const { return px0 + (v - lo) / (hi - lo) * (px1 - px0); }
};

inline std::pair<double, double> padded_range(double lo, double hi, double pad_frac = 0.06) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  double pad = pad_frac * (hi - lo);
  return {lo - pad, hi + pad};
}

inline void svg_open(std::ostream& out, double w, double h) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_num(w) << "\" height=\""
      << svg_num(h) << "\" viewBox=\"0 0 " << svg_num(w) << " " << svg_num(h) << "\">\n"
      << "<style>text{font-family:sans-serif;fill:#333}.t{font-size:13px;font-weight:bold}"
         ".l{font-size:10px}.k{font-size:9px;fill:#666}</style>\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline void svg_text(std::ostream& out, double x, double y, const std::string& cls,
                     const std::string& anchor, const std::string& s) {
  out << "<text x=\"" << svg_num(x) << "\" y=\"" << svg_num(y) << "\" class=\"" << cls
      << "\" text-anchor=\"" << anchor << "\">" << svg_escape(s) << "</text>\n";
}

inline void svg_line(std::ostream& out, double x1, double y1, double x2, double y2,
                     const std::string& stroke, double width = 1.0) {
  out << "<line x1=\"" << svg_num(x1) << "\" y1=\"" << svg_num(y1) << "\" x2=\"" << svg_num(x2)
      << "\" y2=\"" << svg_num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\""
      << svg_num(width) << "\"/>\n";
}

inline void svg_polyline(std::ostream& out, const std::vector<std::pair<double, double>>& pts,
                         const std::string& stroke, double width) {
  if (pts.size() < 2) return;
  out << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << svg_num(width)
      << "\" points=\"";
  for (const auto& p : pts) out << svg_num(p.first) << "," << svg_num(p.second) << " ";
  out << "\"/>\n";
}

inline const char* kRefColor = "#4878cf";
inline const char* kPredColor = "#ee854a";

}  // namespace detail

// One panel per column of reference/predicted; rows are samples labelled by
// time. trial_of_row (optional) splits the series into one polyline per trial.
inline void write_trace_grid_svg(std::ostream& out, const std::string& title,
                                 const std::vector<std::string>& names, const VectorXd& t,
                                 const MatrixXd& reference, const MatrixXd& predicted,
                                 const std::string& y_label,
                                 const std::vector<int>* trial_of_row = nullptr) {
  using namespace detail;
  int n = static_cast<int>(t.size());
  int m = static_cast<int>(names.size());
  require(n >= 2, "trace plot: need at least two samples");
  require(reference.rows() == n && predicted.rows() == n, "trace plot: row count mismatch");
  require(reference.cols() == m && predicted.cols() == m, "trace plot: column count mismatch");
  if (trial_of_row)
    require(static_cast<int>(trial_of_row->size()) == n, "trace plot: trial id count mismatch");

  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i)
    groups[trial_of_row ? (*trial_of_row)[static_cast<std::size_t>(i)] : 0].push_back(i);
  for (auto& [trial, rows] : groups) {
    (void)trial;
    std::sort(rows.begin(), rows.end(), [&](int a, int b) { return t(a) < t(b); });
  }

  const int cols = m >= 2 ? 2 : 1;
  const int rows_n = (m + cols - 1) / cols;
  const double pw = 300, ph = 120, gx = 56, gy = 40, top = 56, left = 52;
  const double W = left + cols * pw + (cols - 1) * gx + 20;
  const double H = top + rows_n * ph + (rows_n - 1) * gy + 44;
  svg_open(out, W, H);
  svg_text(out, W / 2, 22, "t", "middle", title);

  // legend
  svg_line(out, W / 2 - 110, 36, W / 2 - 86, 36, kRefColor, 2);
  svg_text(out, W / 2 - 80, 40, "l", "start", "reference");
  svg_line(out, W / 2 + 10, 36, W / 2 + 34, 36, kPredColor, 2);
  svg_text(out, W / 2 + 40, 40, "l", "start", "prediction");

  auto [tlo, thi] = padded_range(t.minCoeff(), t.maxCoeff());
  for (int k = 0; k < m; ++k) {
    double x0 = left + (k % cols) * (pw + gx);
    double y0 = top + (k / cols) * (ph + gy);
    double vlo = std::min(reference.col(k).minCoeff(), predicted.col(k).minCoeff());
    double vhi = std::max(reference.col(k).maxCoeff(), predicted.col(k).maxCoeff());
    auto [lo, hi] = padded_range(vlo, vhi);
    SvgScale sx{tlo, thi, x0, x0 + pw};
    SvgScale sy{lo, hi, y0 + ph, y0};

    out << "<rect x=\"" << svg_num(x0) << "\" y=\"" << svg_num(y0) << "\" width=\"" << svg_num(pw)
        << "\" height=\"" << svg_num(ph) << "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg_text(out, x0 + 4, y0 + 12, "l", "start", names[static_cast<std::size_t>(k)]);
    for (int tick = 0; tick <= 2; ++tick) {
      double v = lo + (hi - lo) * tick / 2.0;
      svg_line(out, x0 - 3, sy(v), x0, sy(v), "#999");
      svg_text(out, x0 - 5, sy(v) + 3, "k", "end", svg_num(v));
      double tv = tlo + (thi - tlo) * tick / 2.0;
      svg_line(out, sx(tv), y0 + ph, sx(tv), y0 + ph + 3, "#999");
      svg_text(out, sx(tv), y0 + ph + 13, "k", "middle", svg_num(tv));
    }
    for (const auto& [trial, idx] : groups) {
      (void)trial;
      std::vector<std::pair<double, double>> rp, pp;
      for (int i : idx) {
        rp.emplace_back(sx(t(i)), sy(reference(i, k)));
        pp.emplace_back(sx(t(i)), sy(predicted(i, k)));
      }
      svg_polyline(out, rp, kRefColor, 1.3);
      svg_polyline(out, pp, kPredColor, 1.3);
    }
  }
  svg_text(out, W / 2, H - 8, "l", "middle", "time [s]");
  svg_text(out, 14, top - 10, "l", "start", y_label);
  out << "</svg>\n";
}

// One bar per name, mean with an sd whisker; entries with n == 0 are marked
// n/a. The value axis always spans at least [0, 1].
inline void write_metric_bars_svg(std::ostream& out, const std::string& title,
                                  const std::vector<std::string>& names,
                                  const std::vector<Aggregate>& values) {
  using namespace detail;
  require(!names.empty() && names.size() == values.size(), "bar plot: size mismatch");
  int m = static_cast<int>(names.size());

  double vlo = 0.0, vhi = 1.0;
  for (const auto& a : values) {
    if (a.n == 0) continue;
    vlo = std::min(vlo, a.mean - a.sd);
    vhi = std::max(vhi, a.mean + a.sd);
  }
  auto [lo, hi] = padded_range(vlo, vhi, 0.08);

  const double slot = 52, left = 56, top = 48, ph = 220;
  const double W = left + m * slot + 20;
  const double H = top + ph + 40;
  svg_open(out, W, H);
  svg_text(out, W / 2, 24, "t", "middle", title);
  SvgScale sy{lo, hi, top + ph, top};

  for (int tick = 0; tick <= 4; ++tick) {
    double v = lo + (hi - lo) * tick / 4.0;
    svg_line(out, left - 4, sy(v), left, sy(v), "#999");
    svg_line(out, left, sy(v), left + m * slot, sy(v), "#eee");
    svg_text(out, left - 6, sy(v) + 3, "k", "end", svg_num(v));
  }
  svg_line(out, left, sy(0.0), left + m * slot, sy(0.0), "#999");

  for (int k = 0; k < m; ++k) {
    double cx = left + slot * (k + 0.5);
    const Aggregate& a = values[static_cast<std::size_t>(k)];
    if (a.n == 0) {
      svg_text(out, cx, sy(0.0) - 6, "k", "middle", "n/a");
    } else {
      double yb = sy(0.0), yv = sy(a.mean);
      out << "<rect x=\"" << svg_num(cx - 14) << "\" y=\"" << svg_num(std::min(yb, yv))
          << "\" width=\"28\" height=\"" << svg_num(std::abs(yb - yv))
          << "\" fill=\"#4878cf\" fill-opacity=\"0.85\"/>\n";
      if (a.sd > 0.0) {
        svg_line(out, cx, sy(a.mean - a.sd), cx, sy(a.mean + a.sd), "#333");
        svg_line(out, cx - 5, sy(a.mean - a.sd), cx + 5, sy(a.mean - a.sd), "#333");
        svg_line(out, cx - 5, sy(a.mean + a.sd), cx + 5, sy(a.mean + a.sd), "#333");
      }
      char lab[16];
      std::snprintf(lab, sizeof lab, "%.2f", a.mean);
      svg_text(out, cx, std::min(sy(a.mean - a.sd), sy(a.mean + a.sd)) - 4, "k", "middle", lab);
    }
    svg_text(out, cx, top + ph + 14, "l", "middle", names[static_cast<std::size_t>(k)]);
  }
  out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Metrics CSV (muscle, metric, mean, sd, n) reader, so `report` can plot what
// `eval` wrote without recomputing anything.

struct MetricRow {
  std::string muscle, metric;
  double mean = 0.0, sd = 0.0;
  int n = 0;
};

inline std::vector<MetricRow> parse_metrics_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "metrics csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "muscle,metric,mean,sd,n", "metrics csv: unexpected header: " + line);
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    require(cells.size() == 5, "metrics csv: expected 5 cells: " + line);
    MetricRow r;
    r.muscle = cells[0];
    r.metric = cells[1];
    r.mean = cells[2] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[2]);
    r.sd = std::stod(cells[3]);
    r.n = std::stoi(cells[4]);
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<MetricRow> load_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open " + path);
  return parse_metrics_csv(f);
}

// Bars for one metric, in first-appearance muscle order, ALL row excluded.
inline void metric_bars_from_rows(std::ostream& out, const std::vector<MetricRow>& rows,
                                  const std::string& metric, const std::string& title) {
  std::vector<std::string> names;
  std::vector<Aggregate> vals;
  for (const auto& r : rows) {
    if (r.metric != metric || r.muscle == "ALL") continue;
    names.push_back(r.muscle);
    Aggregate a;
    a.n = std::isnan(r.mean) ? 0 : r.n;
    a.mean = r.mean;
    a.sd = r.sd;
    vals.push_back(a);
  }
  require(!names.empty(), "metrics csv: no rows for metric " + metric);
  write_metric_bars_svg(out, title, names, vals);
}

}  // namespace msknet
