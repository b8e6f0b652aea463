#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <string>
#include <vector>

#include "msknet/report.hpp"
#include "msknet/train.hpp"

using namespace msknet;
using Catch::Matchers::ContainsSubstring;

namespace {

int count_of(const std::string& hay, const std::string& needle) {
  int n = 0;
  for (std::size_t at = hay.find(needle); at != std::string::npos;
       at = hay.find(needle, at + needle.size()))
    ++n;
  return n;
}

}  // namespace

TEST_CASE("trace grid draws one reference and one prediction line per muscle") {
  VectorXd t(5);
  t << 0.0, 0.1, 0.2, 0.3, 0.4;
  MatrixXd ref(5, 3), pred(5, 3);
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 3; ++k) {
      ref(i, k) = 0.1 * k + 0.01 * i;
      pred(i, k) = ref(i, k) + 0.005;
    }
  std::stringstream ss;
  write_trace_grid_svg(ss, "demo <&>", {"A", "B", "C"}, t, ref, pred, "activation [-]");
  std::string svg = ss.str();

  REQUIRE(svg.rfind("<svg", 0) == 0);
  REQUIRE(svg.find("</svg>") != std::string::npos);
  REQUIRE(count_of(svg, "<polyline") == 6);
  REQUIRE(svg.find("demo &lt;&amp;&gt;") != std::string::npos);
  REQUIRE(svg.find("reference") != std::string::npos);
  REQUIRE(svg.find("prediction") != std::string::npos);

  // a second trial splits each series into two polylines
  std::vector<int> trials{0, 0, 0, 1, 1};
  std::stringstream ss2;
  write_trace_grid_svg(ss2, "demo", {"A", "B", "C"}, t, ref, pred, "y", &trials);
  REQUIRE(count_of(ss2.str(), "<polyline") == 12);

  MatrixXd bad(4, 3);
  REQUIRE_THROWS_WITH(write_trace_grid_svg(ss, "x", {"A", "B", "C"}, t, bad, pred, "y"),
                      ContainsSubstring("row count"));
}

TEST_CASE("metric bars mark undefined entries and keep the unit span") {
  std::vector<Aggregate> vals(3);
  vals[0] = {0.91, 0.04, 5};
  vals[1] = {-0.2, 0.5, 5};  // negative means must stay on the chart
  vals[2] = {0.0, 0.0, 0};   // undefined
  std::stringstream ss;
  write_metric_bars_svg(ss, "R2", {"A", "B", "C"}, vals);
  std::string svg = ss.str();

  REQUIRE(svg.rfind("<svg", 0) == 0);
  REQUIRE(count_of(svg, "<rect") == 3);  // background + two bars
  REQUIRE(svg.find("n/a") != std::string::npos);
  REQUIRE(svg.find("0.91") != std::string::npos);

  REQUIRE_THROWS_WITH(write_metric_bars_svg(ss, "t", {"A"}, vals),
                      ContainsSubstring("size mismatch"));
}

TEST_CASE("metrics CSV round-trips through the writer and bar plotter") {
  EvalReport rep;
  MuscleEval a;
  a.name = "GL";
  a.r2_activation = {0.83, 0.02, 3};
  a.nrmse_activation = {0.11, 0.01, 3};
  a.r2_force = {0.8, 0.05, 3};
  a.nrmse_force = {0.12, 0.0, 3};
  MuscleEval b;
  b.name = "GM";  // undefined everywhere
  rep.muscles = {a, b};
  rep.r2_activation = {0.83, 0.0, 1};
  rep.nrmse_activation = {0.11, 0.0, 1};
  rep.r2_force = {0.8, 0.0, 1};
  rep.nrmse_force = {0.12, 0.0, 1};
  rep.latency_ms_mean = 1.5;
  rep.latency_ms_sd = 0.2;
  rep.latency_ms_max = 2.0;
  rep.latency_reps = 20;

  std::stringstream ss;
  write_metrics_csv(ss, rep);
  auto rows = parse_metrics_csv(ss);
  REQUIRE(rows.size() == 2 * 4 + 4 + 2);
  REQUIRE(rows[0].muscle == "GL");
  REQUIRE(rows[0].metric == "r2_activation");
  REQUIRE(rows[0].mean == 0.83);
  REQUIRE(rows[0].sd == 0.02);
  REQUIRE(rows[0].n == 3);
  REQUIRE(std::isnan(rows[4].mean));  // GM rows are nan with n 0
  REQUIRE(rows[4].n == 0);

  std::stringstream bars;
  metric_bars_from_rows(bars, rows, "r2_activation", "R2");
  REQUIRE(bars.str().find("GL") != std::string::npos);
  REQUIRE(bars.str().find("n/a") != std::string::npos);  // GM undefined
  REQUIRE(bars.str().find("ALL") == std::string::npos);

  REQUIRE_THROWS_WITH(metric_bars_from_rows(bars, rows, "nope", "t"),
                      ContainsSubstring("no rows"));

  std::stringstream bad("muscle,metric\nx");
  REQUIRE_THROWS_WITH(parse_metrics_csv(bad), ContainsSubstring("unexpected header"));
}
